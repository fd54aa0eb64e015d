//! Multimodal multitask pretraining: masked prediction + coordinate
//! denoising + InfoNCE cross-modal alignment, summed with unit weights.
//!
//! Each step draws a shuffled mini-batch, applies fresh masking and
//! coordinate noise, runs both encoders, and takes one Adam step on the sum
//! of the enabled losses. Disabled tasks contribute exactly 0 and build no
//! graph nodes, so their dedicated head parameters receive no gradient at
//! all. The whole run is deterministic in the seed.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::derive_seed;
use crate::conformer::{add_virtual_atom, inject_noise, Conformer, ConformerError, NoisyConformer, VirtualizedConformer};
use crate::numerics::{
    adam_step, AdamHyper, AdamState, Graph, NodeId, NumericsError, ParamStore, Tensor,
};
use crate::psmiles::{
    apply_masking, tokenize, transform_stars, MaskedSequence, PSmiles, PsmilesError, StarStrategy,
    TokenSequence, Vocabulary,
};
use crate::seq_encoder::{init_seq_params, mlm_probs_graph, seq_forward, SeqConfig, SeqError};
use crate::struct_encoder::{
    decode_coordinates_graph, init_struct_params, struct_forward, StructConfig, StructError,
};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("P-SMILES {psmiles:?} has no matching conformer (strategy {strategy})")]
    DataMisaligned { psmiles: String, strategy: String },
    #[error("at least one pretraining task must be enabled")]
    NoTasksEnabled,
    #[error("numeric failure at step {step}: {source}")]
    Numeric {
        step: usize,
        #[source]
        source: NumericsError,
    },
    #[error(transparent)]
    Psmiles(#[from] PsmilesError),
    #[error(transparent)]
    Conformer(#[from] ConformerError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Struct(#[from] StructError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PretrainError>;

/// On/off switches for the three pretraining tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskToggles {
    pub mlm: bool,
    pub denoise: bool,
    pub contrast: bool,
}

impl TaskToggles {
    pub fn all() -> Self {
        Self {
            mlm: true,
            denoise: true,
            contrast: true,
        }
    }

    pub fn any(&self) -> bool {
        self.mlm || self.denoise || self.contrast
    }

    /// Parses a comma-separated task list such as `"mlm,denoise,contrast"`.
    pub fn from_list(list: &str) -> std::result::Result<Self, String> {
        let mut t = Self {
            mlm: false,
            denoise: false,
            contrast: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "mlm" => t.mlm = true,
                "denoise" => t.denoise = true,
                "contrast" => t.contrast = true,
                other => return Err(format!("unknown task {other:?}")),
            }
        }
        Ok(t)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.mlm {
            parts.push("mlm");
        }
        if self.denoise {
            parts.push("denoise");
        }
        if self.contrast {
            parts.push("contrast");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join(",")
        }
    }
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Coordinate noise half-width in Å.
    pub noise_scale: f64,
    pub mask_rate: f64,
    /// Shared contrastive projection dim.
    pub contrast_dim: usize,
    pub seed: u64,
    pub strategy: StarStrategy,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 300,
            lr: 1e-3,
            tau: 0.1,
            noise_scale: 1.0,
            mask_rate: 0.15,
            contrast_dim: 64,
            seed: 42,
            strategy: StarStrategy::Substitute,
        }
    }
}

/// One polymer with both clean views ready for corruption.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub psmiles: PSmiles,
    pub tokens: TokenSequence,
    pub conformer: VirtualizedConformer,
}

/// One corrupted mini-batch: masked sequences and noisy conformers aligned
/// by index (entry i of both views describes the same polymer).
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub masked: Vec<MaskedSequence>,
    pub noisy: Vec<NoisyConformer>,
}

/// Pairs every corpus entry with its conformer, matching on the
/// strategy-converted P-SMILES string.
pub fn align_corpus(
    corpus: &[PSmiles],
    conformers: &[Conformer],
    vocab: &Vocabulary,
    strategy: StarStrategy,
) -> Result<Vec<PairedSample>> {
    let _ = vocab;
    let mut by_key: HashMap<&str, &Conformer> = HashMap::new();
    for c in conformers {
        by_key.insert(c.psmiles.as_str(), c);
    }
    let mut out = Vec::with_capacity(corpus.len());
    for p in corpus {
        let key = transform_stars(p, strategy)?;
        let conformer = by_key
            .get(key.text())
            .ok_or_else(|| PretrainError::DataMisaligned {
                psmiles: p.text().to_string(),
                strategy: strategy.as_str().to_string(),
            })?;
        out.push(PairedSample {
            psmiles: p.clone(),
            tokens: tokenize(p)?,
            conformer: add_virtual_atom(conformer),
        });
    }
    Ok(out)
}

/// Per-step loss components; disabled tasks report 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub l_1d: f64,
    pub l_3d: f64,
    pub l_contrast: f64,
    pub total: f64,
}

/// Writes the loss trace as `step,l_1d,l_3d,l_contrast,total` CSV.
pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|source| PretrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut text = String::from("step,l_1d,l_3d,l_contrast,total\n");
    for row in trace {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.l_1d, row.l_3d, row.l_contrast, row.total
        ));
    }
    file.write_all(text.as_bytes())
        .map_err(|source| PretrainError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Inserts the two linear projectors mapping X_1d and X_3d into the shared
/// contrastive space.
pub fn init_projector_params(
    seq_dim: usize,
    atom_dim: usize,
    contrast_dim: usize,
    seed: u64,
    store: &mut ParamStore,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.insert_normal("proj.seq.w", vec![seq_dim, contrast_dim], 0.02, &mut rng);
    store.insert_normal("proj.struct.w", vec![atom_dim, contrast_dim], 0.02, &mut rng);
}

/// Initializes every parameter group (encoders, heads, projectors) from one
/// seed via independent derived streams.
pub fn init_all_params(
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    contrast_dim: usize,
    seed: u64,
) -> ParamStore {
    let mut store = ParamStore::new();
    init_seq_params(seq_cfg, derive_seed(seed, "init.seq", 0), &mut store);
    init_struct_params(struct_cfg, derive_seed(seed, "init.struct", 0), &mut store);
    init_projector_params(
        seq_cfg.dim,
        struct_cfg.atom_dim,
        contrast_dim,
        derive_seed(seed, "init.proj", 0),
        &mut store,
    );
    store
}

struct BatchGraph {
    total: NodeId,
    l_1d: Option<NodeId>,
    l_3d: Option<NodeId>,
    l_contrast: Option<NodeId>,
}

/// Builds the Eq.-12-style multitask objective for one batch: the sum of the
/// enabled components with unit weights. X_1d/X_3d for the contrastive term
/// come from the same corrupted forward passes that feed the other tasks.
fn batch_loss_graph(
    g: &mut Graph,
    seq_cfg: &SeqConfig,
    batch: &PairedBatch,
    toggles: &TaskToggles,
    struct_cfg: &StructConfig,
    tau: f64,
) -> Result<BatchGraph> {
    assert_eq!(batch.masked.len(), batch.noisy.len(), "unaligned batch");
    let k = batch.masked.len();
    let need_seq = toggles.mlm || toggles.contrast;
    let need_struct = toggles.denoise || toggles.contrast;

    let mut ce_terms = Vec::new();
    let mut x1d = Vec::with_capacity(k);
    let mut x3d = Vec::with_capacity(k);
    let mut sl_terms = Vec::with_capacity(k);

    for i in 0..k {
        if need_seq {
            let m = &batch.masked[i];
            let fwd = seq_forward(g, seq_cfg, &m.input_ids)?;
            if toggles.mlm && !m.mask_positions.is_empty() {
                let probs = mlm_probs_graph(g, fwd.reps, &m.mask_positions);
                ce_terms.push(g.cross_entropy_probs(probs, &m.labels));
            }
            x1d.push(fwd.x1d);
        }
        if need_struct {
            let n = &batch.noisy[i];
            let fwd = struct_forward(g, struct_cfg, &n.atoms, &n.noisy)?;
            if toggles.denoise {
                let p_hat = decode_coordinates_graph(g, fwd.xp_final, fwd.xp0, &n.noisy);
                let clean: Vec<f64> = n.clean.iter().flatten().copied().collect();
                let target = g.constant(Tensor::new(vec![n.n_total(), 3], clean));
                // Real atoms only; the virtual centroid row is excluded.
                let mut include = vec![true; n.n_total()];
                include[0] = false;
                sl_terms.push(g.smooth_l1(p_hat, target, &include));
            }
            x3d.push(fwd.x3d);
        }
    }

    let mut components = Vec::new();
    let l_1d = if toggles.mlm {
        let node = if ce_terms.is_empty() {
            g.constant(Tensor::scalar(0.0))
        } else {
            let sum = g.sum_list(&ce_terms);
            g.scale(sum, 1.0 / ce_terms.len() as f64)
        };
        components.push(node);
        Some(node)
    } else {
        None
    };
    let l_3d = if toggles.denoise {
        let node = if sl_terms.is_empty() {
            g.constant(Tensor::scalar(0.0))
        } else {
            let sum = g.sum_list(&sl_terms);
            g.scale(sum, 1.0 / sl_terms.len() as f64)
        };
        components.push(node);
        Some(node)
    } else {
        None
    };
    let l_contrast = if toggles.contrast {
        let node = contrastive_graph(g, &x1d, &x3d, tau);
        components.push(node);
        Some(node)
    } else {
        None
    };

    if components.is_empty() {
        return Err(PretrainError::NoTasksEnabled);
    }
    let total = g.sum_list(&components);
    Ok(BatchGraph {
        total,
        l_1d,
        l_3d,
        l_contrast,
    })
}

/// InfoNCE over projected embeddings, one-directional: 1D anchors over 3D
/// candidates, labels on the diagonal.
fn contrastive_graph(g: &mut Graph, x1d: &[NodeId], x3d: &[NodeId], tau: f64) -> NodeId {
    assert_eq!(x1d.len(), x3d.len());
    let k = x1d.len();
    let w1 = g.param("proj.seq.w");
    let w3 = g.param("proj.struct.w");
    let z1: Vec<NodeId> = x1d.iter().map(|&x| g.matmul(x, w1)).collect();
    let z3: Vec<NodeId> = x3d.iter().map(|&x| g.matmul(x, w3)).collect();
    let mut sims = Vec::with_capacity(k * k);
    for &a in &z1 {
        for &b in &z3 {
            sims.push(g.cosine(a, b));
        }
    }
    let s = g.stack_scalars(&sims, k, k);
    let scaled = g.scale(s, 1.0 / tau);
    let probs = g.softmax_rows(scaled);
    let labels: Vec<usize> = (0..k).collect();
    g.cross_entropy_probs(probs, &labels)
}

/// Builds the full multitask loss graph over a batch and returns it with the
/// total-loss node, for callers that need gradients (training, grad checks).
pub fn build_loss_graph<'p>(
    params: &'p ParamStore,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    batch: &PairedBatch,
    toggles: &TaskToggles,
    tau: f64,
) -> Result<(Graph<'p>, NodeId)> {
    let mut g = Graph::new(params);
    let built = batch_loss_graph(&mut g, seq_cfg, batch, toggles, struct_cfg, tau)?;
    Ok((g, built.total))
}

// ---- pure loss wrappers ------------------------------------------------

/// Batch-mean masked-prediction loss (samples with empty mask sets are
/// excluded from the mean; 0 when every mask set is empty).
pub fn masked_prediction_loss(
    batch: &[MaskedSequence],
    seq_cfg: &SeqConfig,
    params: &ParamStore,
) -> Result<f64> {
    let mut g = Graph::new(params);
    let mut terms = Vec::new();
    for m in batch {
        if m.mask_positions.is_empty() {
            continue;
        }
        let fwd = seq_forward(&mut g, seq_cfg, &m.input_ids)?;
        let probs = mlm_probs_graph(&mut g, fwd.reps, &m.mask_positions);
        terms.push(g.cross_entropy_probs(probs, &m.labels));
    }
    if terms.is_empty() {
        return Ok(0.0);
    }
    let sum = g.sum_list(&terms);
    let mean = g.scale(sum, 1.0 / terms.len() as f64);
    Ok(g.scalar(mean)?)
}

/// Batch-mean coordinate-denoising loss (smooth L1 against the clean
/// coordinates over real atoms).
pub fn coordinate_denoising_loss(
    batch: &[NoisyConformer],
    struct_cfg: &StructConfig,
    params: &ParamStore,
) -> Result<f64> {
    let mut g = Graph::new(params);
    let mut terms = Vec::new();
    for n in batch {
        let fwd = struct_forward(&mut g, struct_cfg, &n.atoms, &n.noisy)?;
        let p_hat = decode_coordinates_graph(&mut g, fwd.xp_final, fwd.xp0, &n.noisy);
        let clean: Vec<f64> = n.clean.iter().flatten().copied().collect();
        let target = g.constant(Tensor::new(vec![n.n_total(), 3], clean));
        let mut include = vec![true; n.n_total()];
        include[0] = false;
        terms.push(g.smooth_l1(p_hat, target, &include));
    }
    if terms.is_empty() {
        return Ok(0.0);
    }
    let sum = g.sum_list(&terms);
    let mean = g.scale(sum, 1.0 / terms.len() as f64);
    Ok(g.scalar(mean)?)
}

/// InfoNCE alignment loss on raw embedding batches (projected internally).
pub fn contrastive_alignment_loss(
    x1d: &[Tensor],
    x3d: &[Tensor],
    params: &ParamStore,
    tau: f64,
) -> Result<f64> {
    assert_eq!(x1d.len(), x3d.len(), "batch sizes must match");
    assert!(!x1d.is_empty(), "contrastive loss needs K >= 1");
    let mut g = Graph::new(params);
    let x1d_nodes: Vec<NodeId> = x1d
        .iter()
        .map(|t| g.constant(Tensor::new(vec![1, t.len()], t.data().to_vec())))
        .collect();
    let x3d_nodes: Vec<NodeId> = x3d
        .iter()
        .map(|t| g.constant(Tensor::new(vec![1, t.len()], t.data().to_vec())))
        .collect();
    let loss = contrastive_graph(&mut g, &x1d_nodes, &x3d_nodes, tau);
    Ok(g.scalar(loss)?)
}

/// Total multitask loss for one batch plus the component breakdown
/// `(l_1d, l_3d, l_contrast)`; disabled components report 0.
pub fn total_loss(
    batch: &PairedBatch,
    toggles: &TaskToggles,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    tau: f64,
    params: &ParamStore,
) -> Result<(f64, [f64; 3])> {
    let mut g = Graph::new(params);
    let built = batch_loss_graph(&mut g, seq_cfg, batch, toggles, struct_cfg, tau)?;
    let read = |g: &Graph, n: Option<NodeId>| -> Result<f64> {
        Ok(match n {
            Some(id) => g.scalar(id)?,
            None => 0.0,
        })
    };
    let l1 = read(&g, built.l_1d)?;
    let l3 = read(&g, built.l_3d)?;
    let lc = read(&g, built.l_contrast)?;
    Ok((g.scalar(built.total)?, [l1, l3, lc]))
}

/// Corrupts one mini-batch with fresh masking and noise.
pub fn corrupt_batch(
    samples: &[PairedSample],
    indices: &[usize],
    vocab: &Vocabulary,
    cfg: &PretrainConfig,
    rng: &mut impl rand::Rng,
) -> PairedBatch {
    let mut masked = Vec::with_capacity(indices.len());
    let mut noisy = Vec::with_capacity(indices.len());
    for &i in indices {
        masked.push(apply_masking(&samples[i].tokens, vocab, cfg.mask_rate, rng));
        noisy.push(inject_noise(&samples[i].conformer, cfg.noise_scale, rng));
    }
    PairedBatch { masked, noisy }
}

/// Runs the pretraining loop; returns the trained parameters and the
/// per-step loss trace. Deterministic in `cfg.seed`.
pub fn run_pretraining(
    corpus: &[PSmiles],
    conformers: &[Conformer],
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    cfg: &PretrainConfig,
    toggles: &TaskToggles,
) -> Result<(ParamStore, Vec<TraceRow>)> {
    if !toggles.any() {
        return Err(PretrainError::NoTasksEnabled);
    }
    let samples = align_corpus(corpus, conformers, vocab, cfg.strategy)?;
    let mut params = init_all_params(seq_cfg, struct_cfg, cfg.contrast_dim, cfg.seed);
    let mut adam = AdamState::new(AdamHyper::with_lr(cfg.lr));
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "data", 0));
    let mut trace = Vec::with_capacity(cfg.steps);

    let mut step = 0usize;
    'outer: loop {
        if step >= cfg.steps {
            break;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut data_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if step >= cfg.steps {
                break 'outer;
            }
            let batch = corrupt_batch(&samples, chunk, vocab, cfg, &mut data_rng);
            let mut g = Graph::new(&params);
            let built = batch_loss_graph(&mut g, seq_cfg, &batch, toggles, struct_cfg, cfg.tau)?;
            let wrap = |source: NumericsError| PretrainError::Numeric { step, source };
            let total = g.scalar(built.total).map_err(wrap)?;
            let read = |n: Option<NodeId>| n.map(|id| g.value(id).item()).unwrap_or(0.0);
            trace.push(TraceRow {
                step,
                l_1d: read(built.l_1d),
                l_3d: read(built.l_3d),
                l_contrast: read(built.l_contrast),
                total,
            });
            let grads = g.backward(built.total).map_err(wrap)?;
            adam_step(&mut params, &grads, &mut adam).map_err(wrap)?;
            step += 1;
        }
        if samples.is_empty() {
            break;
        }
    }

    Ok((params, trace))
}

/// Top-1 matched-pair retrieval accuracy of the contrastive alignment on
/// clean (uncorrupted) inputs: for each 1D anchor, does the most similar
/// projected 3D embedding belong to the same polymer?
pub fn contrastive_retrieval_accuracy(
    samples: &[PairedSample],
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    params: &ParamStore,
) -> Result<f64> {
    use crate::numerics::kernels::cosine_similarity;
    use crate::seq_encoder::encode_sequence;
    use crate::struct_encoder::encode_structure;

    let k = samples.len();
    assert!(k > 0);
    let w1 = params.expect("proj.seq.w");
    let w3 = params.expect("proj.struct.w");
    let mut z1 = Vec::with_capacity(k);
    let mut z3 = Vec::with_capacity(k);
    for s in samples {
        let ids = vocab.encode(&s.tokens);
        let (_, x1d) = encode_sequence(&ids, seq_cfg, params)?;
        let (_, _, x3d) = encode_structure(&s.conformer.atoms, &s.conformer.coords, struct_cfg, params)?;
        z1.push(Tensor::new(vec![1, x1d.len()], x1d.data().to_vec()).matmul(w1));
        z3.push(Tensor::new(vec![1, x3d.len()], x3d.data().to_vec()).matmul(w3));
    }
    let mut hits = 0usize;
    for i in 0..k {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for j in 0..k {
            let sim = cosine_similarity(z1[i].data(), z3[j].data())?;
            if sim > best.0 {
                best = (sim, j);
            }
        }
        if best.1 == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / k as f64)
}
