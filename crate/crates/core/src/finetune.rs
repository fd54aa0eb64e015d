//! Supervised fine-tuning and k-fold evaluation.
//!
//! A regression head (2-layer GELU perceptron) sits on the chosen modality:
//! X_1d, X_3d, or their concatenation. Targets are z-scored per training
//! fold; predictions are de-normalized back to original units before RMSE
//! and R² are computed. Folds are seeded, disjoint, and exhaustive, and the
//! normalization statistics never see held-out targets.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::derive_seed;
use crate::conformer::{add_virtual_atom, chain_embed, ConformerError, VirtualizedConformer};
use crate::numerics::{adam_step, AdamHyper, AdamState, Graph, NodeId, NumericsError, ParamStore, Tensor};
use crate::psmiles::{tokenize, transform_stars, PSmiles, PsmilesError, StarStrategy, Vocabulary};
use crate::seq_encoder::{seq_forward, SeqConfig, SeqError};
use crate::struct_encoder::{struct_forward, StructConfig, StructError};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("R² is undefined for constant targets")]
    ConstantTargets,
    #[error("dataset has {records} records but {folds}-fold evaluation needs at least {folds}")]
    TooFewRecords { records: usize, folds: usize },
    #[error("no conformer available for {psmiles:?}: {reason}")]
    MissingConformer { psmiles: String, reason: String },
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("value {value} of {psmiles:?} outside declared range [{lo}, {hi}]")]
    OutOfRange {
        psmiles: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("prediction lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Psmiles(#[from] PsmilesError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Struct(#[from] StructError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, FinetuneError>;

/// Which representation feeds the regression head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    OneD,
    ThreeD,
    Both,
}

impl Modality {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1d" => Some(Self::OneD),
            "3d" => Some(Self::ThreeD),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OneD => "1d",
            Self::ThreeD => "3d",
            Self::Both => "both",
        }
    }

    pub fn needs_seq(self) -> bool {
        matches!(self, Self::OneD | Self::Both)
    }

    pub fn needs_struct(self) -> bool {
        matches!(self, Self::ThreeD | Self::Both)
    }

    pub fn input_dim(self, seq_cfg: &SeqConfig, struct_cfg: &StructConfig) -> usize {
        match self {
            Self::OneD => seq_cfg.dim,
            Self::ThreeD => struct_cfg.atom_dim,
            Self::Both => seq_cfg.dim + struct_cfg.atom_dim,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub head_hidden: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
    pub strategy: StarStrategy,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            head_hidden: 64,
            freeze_encoder: false,
            seed: 42,
            strategy: StarStrategy::Substitute,
        }
    }
}

/// One labeled polymer.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyRecord {
    pub psmiles: PSmiles,
    pub value: f64,
}

/// A property-regression dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyDataset {
    pub name: String,
    pub records: Vec<PropertyRecord>,
    /// Optional declared value range, validated on load.
    pub range: Option<(f64, f64)>,
}

impl PropertyDataset {
    pub fn new(
        name: String,
        records: Vec<PropertyRecord>,
        range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if let Some((lo, hi)) = range {
            for r in &records {
                if r.value < lo || r.value > hi {
                    return Err(FinetuneError::OutOfRange {
                        psmiles: r.psmiles.text().to_string(),
                        value: r.value,
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(Self {
            name,
            records,
            range,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Loads a `psmiles,value` CSV (UTF-8, header required).
    pub fn load_csv(path: &Path, name: &str, range: Option<(f64, f64)>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| FinetuneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let path_str = path.display().to_string();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end_matches('\r') == "psmiles,value" => {}
            other => {
                return Err(FinetuneError::Csv {
                    path: path_str,
                    line: 1,
                    msg: format!(
                        "expected header \"psmiles,value\", got {:?}",
                        other.map(|(_, l)| l).unwrap_or("")
                    ),
                })
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (ps, val) = line.split_once(',').ok_or_else(|| FinetuneError::Csv {
                path: path_str.clone(),
                line: lineno,
                msg: "expected psmiles,value".into(),
            })?;
            let value: f64 = val.trim().parse().map_err(|e| FinetuneError::Csv {
                path: path_str.clone(),
                line: lineno,
                msg: format!("bad value {val:?}: {e}"),
            })?;
            if !value.is_finite() {
                return Err(FinetuneError::Csv {
                    path: path_str.clone(),
                    line: lineno,
                    msg: "value must be finite".into(),
                });
            }
            let psmiles = PSmiles::new(ps.trim()).map_err(|e| FinetuneError::Csv {
                path: path_str.clone(),
                line: lineno,
                msg: e.to_string(),
            })?;
            records.push(PropertyRecord { psmiles, value });
        }
        Self::new(name.to_string(), records, range)
    }

    /// Writes the dataset back as `psmiles,value` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("psmiles,value\n");
        for r in &self.records {
            text.push_str(&format!("{},{}\n", r.psmiles.text(), r.value));
        }
        std::fs::write(path, text).map_err(|source| FinetuneError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

// ---- metrics ---------------------------------------------------------------

/// Root mean squared error.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(FinetuneError::LengthMismatch(pred.len(), target.len()));
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Coefficient of determination `1 − SS_res/SS_tot` about the target mean.
pub fn r_squared(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(FinetuneError::LengthMismatch(pred.len(), target.len()));
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(FinetuneError::ConstantTargets);
    }
    let ss_res: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

// ---- evaluation report -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub rmse: f64,
    pub r2: f64,
    /// Training-fold target mean/std used for z-scoring (population std).
    pub train_mean: f64,
    pub train_std: f64,
    pub test_indices: Vec<usize>,
}

/// Per-fold RMSE/R² plus mean ± sample std (n−1 denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub modality: String,
    pub folds: Vec<FoldMetrics>,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

impl EvalReport {
    pub fn from_folds(dataset: &str, modality: Modality, folds: Vec<FoldMetrics>) -> Self {
        let rmses: Vec<f64> = folds.iter().map(|f| f.rmse).collect();
        let r2s: Vec<f64> = folds.iter().map(|f| f.r2).collect();
        let (rmse_mean, rmse_std) = mean_and_sample_std(&rmses);
        let (r2_mean, r2_std) = mean_and_sample_std(&r2s);
        Self {
            dataset: dataset.to_string(),
            modality: modality.as_str().to_string(),
            folds,
            rmse_mean,
            rmse_std,
            r2_mean,
            r2_std,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table in the `mean ± std` reporting style.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dataset: {}  modality: {}\n",
            self.dataset, self.modality
        ));
        out.push_str("fold  rmse        r2\n");
        for f in &self.folds {
            out.push_str(&format!("{:<5} {:<11.5} {:<.5}\n", f.fold, f.rmse, f.r2));
        }
        out.push_str(&format!(
            "RMSE {:.5} ± {:.5}   R² {:.5} ± {:.5}\n",
            self.rmse_mean, self.rmse_std, self.r2_mean, self.r2_std
        ));
        out
    }
}

// ---- model assembly ------------------------------------------------------

/// Inserts a fresh regression head under `head.*` for the given input dim.
pub fn init_head_params(input_dim: usize, hidden: usize, seed: u64, store: &mut ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.insert_normal("head.w1", vec![input_dim, hidden], 0.05, &mut rng);
    store.insert_zeros("head.b1", vec![hidden]);
    store.insert_normal("head.w2", vec![hidden, 1], 0.05, &mut rng);
    store.insert_zeros("head.b2", vec![1]);
    // z-score statistics travel with the model; not trainable.
    store.insert("head.norm.mu", Tensor::scalar(0.0));
    store.insert("head.norm.sigma", Tensor::scalar(1.0));
    store.set_trainable_prefix("head.norm.", false);
}

/// One record prepared for the encoders.
#[derive(Debug, Clone)]
struct Prepared {
    ids: Vec<usize>,
    conformer: Option<VirtualizedConformer>,
    value: f64,
}

fn prepare_records(
    ds: &PropertyDataset,
    vocab: &Vocabulary,
    modality: Modality,
    strategy: StarStrategy,
) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(ds.len());
    for r in &ds.records {
        let ids = vocab.encode(&tokenize(&r.psmiles)?);
        let conformer = if modality.needs_struct() {
            let converted = transform_stars(&r.psmiles, strategy).map_err(|e| {
                FinetuneError::MissingConformer {
                    psmiles: r.psmiles.text().to_string(),
                    reason: e.to_string(),
                }
            })?;
            let c = chain_embed(&converted).map_err(|e: ConformerError| {
                FinetuneError::MissingConformer {
                    psmiles: r.psmiles.text().to_string(),
                    reason: e.to_string(),
                }
            })?;
            Some(add_virtual_atom(&c))
        } else {
            None
        };
        out.push(Prepared {
            ids,
            conformer,
            value: r.value,
        });
    }
    Ok(out)
}

/// Builds the modality embedding for one record on a graph: `[1, input_dim]`.
fn embed_graph(
    g: &mut Graph,
    rec: &Prepared,
    modality: Modality,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
) -> Result<NodeId> {
    let x1d = if modality.needs_seq() {
        Some(seq_forward(g, seq_cfg, &rec.ids)?.x1d)
    } else {
        None
    };
    let x3d = if modality.needs_struct() {
        let c = rec.conformer.as_ref().ok_or_else(|| {
            FinetuneError::MissingConformer {
                psmiles: String::new(),
                reason: "conformer missing at embed time".into(),
            }
        })?;
        Some(struct_forward(g, struct_cfg, &c.atoms, &c.coords)?.x3d)
    } else {
        None
    };
    Ok(match (x1d, x3d) {
        (Some(a), Some(b)) => g.concat_cols(&[a, b]),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("modality covers at least one encoder"),
    })
}

/// Head forward on a graph: `[1, input_dim]` → scalar prediction (z-space).
fn head_graph(g: &mut Graph, input: NodeId) -> NodeId {
    let w1 = g.param("head.w1");
    let b1 = g.param("head.b1");
    let w2 = g.param("head.w2");
    let b2 = g.param("head.b2");
    let h = g.matmul(input, w1);
    let hb = g.add_row_broadcast(h, b1);
    let ha = g.gelu(hb);
    let o = g.matmul(ha, w2);
    g.add_row_broadcast(o, b2)
}

/// De-normalized property prediction for one polymer.
///
/// `conformer` is required for the 3d/both modalities (pass the virtualized
/// clean conformer); prediction = `mu + sigma * head(embedding)`.
pub fn predict_property(
    psmiles: &PSmiles,
    conformer: Option<&VirtualizedConformer>,
    modality: Modality,
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    params: &ParamStore,
) -> Result<f64> {
    if modality.needs_struct() && conformer.is_none() {
        return Err(FinetuneError::MissingConformer {
            psmiles: psmiles.text().to_string(),
            reason: "3d/both modality requires a conformer".into(),
        });
    }
    let prepared = Prepared {
        ids: vocab.encode(&tokenize(psmiles)?),
        conformer: conformer.cloned(),
        value: f64::NAN,
    };
    let mut g = Graph::new(params);
    let emb = embed_graph(&mut g, &prepared, modality, seq_cfg, struct_cfg)?;
    let raw = head_graph(&mut g, emb);
    let z = g.scalar(raw)?;
    let mu = params.expect("head.norm.mu").item();
    let sigma = params.expect("head.norm.sigma").item();
    Ok(mu + sigma * z)
}

/// The modality embedding itself (used by the embedding exporter).
pub fn polymer_embedding(
    psmiles: &PSmiles,
    conformer: Option<&VirtualizedConformer>,
    modality: Modality,
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    params: &ParamStore,
) -> Result<Vec<f64>> {
    if modality.needs_struct() && conformer.is_none() {
        return Err(FinetuneError::MissingConformer {
            psmiles: psmiles.text().to_string(),
            reason: "3d/both modality requires a conformer".into(),
        });
    }
    let prepared = Prepared {
        ids: vocab.encode(&tokenize(psmiles)?),
        conformer: conformer.cloned(),
        value: f64::NAN,
    };
    let mut g = Graph::new(params);
    let emb = embed_graph(&mut g, &prepared, modality, seq_cfg, struct_cfg)?;
    g.check_fault()?;
    Ok(g.value(emb).data().to_vec())
}

fn train_on(
    records: &[Prepared],
    train_idx: &[usize],
    base: &ParamStore,
    modality: Modality,
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    ft: &FinetuneConfig,
    head_seed: u64,
) -> Result<(ParamStore, f64, f64)> {
    let _ = vocab;
    let targets: Vec<f64> = train_idx.iter().map(|&i| records[i].value).collect();
    let mu = targets.iter().sum::<f64>() / targets.len() as f64;
    let var = targets.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / targets.len() as f64;
    if var == 0.0 {
        return Err(FinetuneError::ConstantTargets);
    }
    let sigma = var.sqrt();

    let mut params = base.clone();
    init_head_params(
        modality.input_dim(seq_cfg, struct_cfg),
        ft.head_hidden,
        head_seed,
        &mut params,
    );
    params.set_data("head.norm.mu", Tensor::scalar(mu));
    params.set_data("head.norm.sigma", Tensor::scalar(sigma));
    if ft.freeze_encoder {
        params.set_trainable_prefix("seq.", false);
        params.set_trainable_prefix("struct.", false);
        params.set_trainable_prefix("proj.", false);
    }

    let mut adam = AdamState::new(AdamHyper::with_lr(ft.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(head_seed, "ft.order", 0));
    let mut order: Vec<usize> = train_idx.to_vec();
    for _epoch in 0..ft.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(ft.batch_size.max(1)) {
            let mut g = Graph::new(&params);
            let mut terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let emb = embed_graph(&mut g, &records[i], modality, seq_cfg, struct_cfg)?;
                let pred = head_graph(&mut g, emb);
                let z = (records[i].value - mu) / sigma;
                let target = g.constant(Tensor::new(vec![1, 1], vec![z]));
                let diff = g.sub(pred, target);
                terms.push(g.mul(diff, diff));
            }
            let sum = g.sum_list(&terms);
            let loss = g.scale(sum, 1.0 / chunk.len() as f64);
            let grads = g.backward(loss)?;
            adam_step(&mut params, &grads, &mut adam)?;
        }
    }
    Ok((params, mu, sigma))
}

fn predict_prepared(
    rec: &Prepared,
    params: &ParamStore,
    modality: Modality,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
) -> Result<f64> {
    let mut g = Graph::new(params);
    let emb = embed_graph(&mut g, rec, modality, seq_cfg, struct_cfg)?;
    let raw = head_graph(&mut g, emb);
    let z = g.scalar(raw)?;
    let mu = params.expect("head.norm.mu").item();
    let sigma = params.expect("head.norm.sigma").item();
    Ok(mu + sigma * z)
}

/// Seeded, disjoint, exhaustive fold assignment: `folds` chunks of a
/// shuffled index list.
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", 0));
    order.shuffle(&mut rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    out
}

/// k-fold cross-validated fine-tuning from a pretrained parameter store.
pub fn run_cross_validation(
    ds: &PropertyDataset,
    pretrained: &ParamStore,
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    ft: &FinetuneConfig,
    modality: Modality,
) -> Result<EvalReport> {
    if ds.len() < ft.folds {
        return Err(FinetuneError::TooFewRecords {
            records: ds.len(),
            folds: ft.folds,
        });
    }
    let records = prepare_records(ds, vocab, modality, ft.strategy)?;
    let assignments = fold_assignments(ds.len(), ft.folds, ft.seed);

    let mut fold_metrics = Vec::with_capacity(ft.folds);
    for (fold, test_idx) in assignments.iter().enumerate() {
        let train_idx: Vec<usize> = assignments
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, idxs)| idxs.iter().copied())
            .collect();
        let head_seed = derive_seed(ft.seed, "head", fold as u64);
        let (params, mu, sigma) = train_on(
            &records, &train_idx, pretrained, modality, vocab, seq_cfg, struct_cfg, ft, head_seed,
        )?;
        let mut preds = Vec::with_capacity(test_idx.len());
        let mut targets = Vec::with_capacity(test_idx.len());
        for &i in test_idx {
            preds.push(predict_prepared(
                &records[i],
                &params,
                modality,
                seq_cfg,
                struct_cfg,
            )?);
            targets.push(records[i].value);
        }
        fold_metrics.push(FoldMetrics {
            fold,
            rmse: rmse(&preds, &targets)?,
            r2: r_squared(&preds, &targets)?,
            train_mean: mu,
            train_std: sigma,
            test_indices: test_idx.clone(),
        });
    }
    Ok(EvalReport::from_folds(&ds.name, modality, fold_metrics))
}

/// Fine-tunes on the full dataset (no held-out split); the resulting store
/// carries encoders + head + normalization stats and can be checkpointed.
pub fn train_full_model(
    ds: &PropertyDataset,
    pretrained: &ParamStore,
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    ft: &FinetuneConfig,
    modality: Modality,
) -> Result<ParamStore> {
    if ds.is_empty() {
        return Err(FinetuneError::TooFewRecords {
            records: 0,
            folds: ft.folds,
        });
    }
    let records = prepare_records(ds, vocab, modality, ft.strategy)?;
    let all: Vec<usize> = (0..records.len()).collect();
    let head_seed = derive_seed(ft.seed, "head.full", 0);
    let (params, _, _) = train_on(
        &records, &all, pretrained, modality, vocab, seq_cfg, struct_cfg, ft, head_seed,
    )?;
    Ok(params)
}

/// Evaluates a finetuned model (head included in `params`) on a dataset.
pub fn evaluate_model(
    ds: &PropertyDataset,
    params: &ParamStore,
    vocab: &Vocabulary,
    seq_cfg: &SeqConfig,
    struct_cfg: &StructConfig,
    modality: Modality,
    strategy: StarStrategy,
) -> Result<(f64, f64)> {
    let records = prepare_records(ds, vocab, modality, strategy)?;
    let mut preds = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for rec in &records {
        preds.push(predict_prepared(rec, params, modality, seq_cfg, struct_cfg)?);
        targets.push(rec.value);
    }
    Ok((rmse(&preds, &targets)?, r_squared(&preds, &targets)?))
}
