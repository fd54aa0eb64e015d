//! 1D representation network: token ids → per-token representations and the
//! pooled `[CLS]` embedding, plus the masked-prediction head.
//!
//! Pre-norm bidirectional transformer: token embedding + sinusoidal position
//! embedding (no segment embeddings), L layers of multi-head self-attention
//! and GELU feed-forward with residuals, a final layer norm. `[PAD]` keys are
//! excluded from attention with a large negative additive mask, so appending
//! padding never changes the other positions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Tensor};
use crate::psmiles::PAD_ID;

/// Additive score for masked (padding) keys. Large enough that the
/// stabilized softmax underflows the weight to exactly 0.
const NEG_MASK: f64 = -1e30;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("positional embedding dimension {0} must be even")]
    OddDimension(usize),
    #[error("sequence length {len} exceeds maximum {max}")]
    LengthExceeded { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    UnknownId { id: usize, vocab: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, SeqError>;

/// Architecture of the sequence encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl SeqConfig {
    /// Desk-scale default: d=64, 2 layers, 4 heads, ff 128, max length 128.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_len: 128,
            vocab_size,
        }
    }

    /// Published-scale preset: 6 layers with 12 attention heads (width and
    /// feed-forward size follow the usual base-encoder conventions).
    pub fn paper_scale(vocab_size: usize) -> Self {
        Self {
            dim: 768,
            layers: 6,
            heads: 12,
            ff_dim: 3072,
            max_len: 512,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % 2 != 0 {
            return Err(SeqError::OddDimension(self.dim));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(SeqError::InvalidConfig(format!(
                "head count {} must divide embedding dim {}",
                self.heads, self.dim
            )));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_len < 2 {
            return Err(SeqError::InvalidConfig(
                "layers, ff_dim and max_len must be positive (max_len >= 2)".into(),
            ));
        }
        if self.vocab_size <= crate::psmiles::NUM_RESERVED {
            return Err(SeqError::InvalidConfig(
                "vocabulary must contain at least one non-reserved token".into(),
            ));
        }
        Ok(())
    }
}

/// Sinusoidal positional embedding: component 2i is sin(pos/10000^{2i/d}),
/// component 2i+1 is cos of the same argument.
pub fn positional_embedding(pos: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(SeqError::OddDimension(dim));
    }
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let arg = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    Ok(out)
}

fn positional_matrix(len: usize, dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        data.extend(positional_embedding(pos, dim)?);
    }
    Ok(Tensor::new(vec![len, dim], data))
}

/// Inserts freshly initialized encoder + MLM-head parameters under `seq.*`:
/// normal(0, 0.02) weights, zero biases, unit layer-norm gains.
pub fn init_seq_params(cfg: &SeqConfig, seed: u64, store: &mut ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.dim;
    store.insert_normal("seq.tok_emb", vec![cfg.vocab_size, d], 0.02, &mut rng);
    for l in 0..cfg.layers {
        let p = format!("seq.l{l}");
        store.insert_full(&format!("{p}.ln1.g"), vec![d], 1.0);
        store.insert_zeros(&format!("{p}.ln1.b"), vec![d]);
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert_normal(&format!("{p}.attn.{name}"), vec![d, d], 0.02, &mut rng);
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.insert_zeros(&format!("{p}.attn.{name}"), vec![d]);
        }
        store.insert_full(&format!("{p}.ln2.g"), vec![d], 1.0);
        store.insert_zeros(&format!("{p}.ln2.b"), vec![d]);
        store.insert_normal(&format!("{p}.ff.w1"), vec![d, cfg.ff_dim], 0.02, &mut rng);
        store.insert_zeros(&format!("{p}.ff.b1"), vec![cfg.ff_dim]);
        store.insert_normal(&format!("{p}.ff.w2"), vec![cfg.ff_dim, d], 0.02, &mut rng);
        store.insert_zeros(&format!("{p}.ff.b2"), vec![d]);
    }
    store.insert_full("seq.final_ln.g", vec![d], 1.0);
    store.insert_zeros("seq.final_ln.b", vec![d]);
    store.insert_normal("seq.mlm.w", vec![d, cfg.vocab_size], 0.02, &mut rng);
    store.insert_zeros("seq.mlm.b", vec![cfg.vocab_size]);
}

/// Node handles produced by a sequence forward pass.
pub struct SeqForward {
    /// Per-token representations, `[T, d]`.
    pub reps: NodeId,
    /// Pooled sequence representation (`[CLS]` row), `[1, d]`.
    pub x1d: NodeId,
}

/// Builds the encoder forward pass on an existing graph.
pub fn seq_forward(g: &mut Graph, cfg: &SeqConfig, ids: &[usize]) -> Result<SeqForward> {
    cfg.validate()?;
    let t_len = ids.len();
    if t_len == 0 {
        return Err(SeqError::InvalidConfig("empty id sequence".into()));
    }
    if t_len > cfg.max_len {
        return Err(SeqError::LengthExceeded {
            len: t_len,
            max: cfg.max_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(SeqError::UnknownId {
            id,
            vocab: cfg.vocab_size,
        });
    }

    let d = cfg.dim;
    let dh = cfg.head_dim();
    let key_mask: Vec<f64> = ids
        .iter()
        .map(|&id| if id == PAD_ID { NEG_MASK } else { 0.0 })
        .collect();
    let key_mask = g.constant(Tensor::new(vec![t_len], key_mask));

    let table = g.param("seq.tok_emb");
    let tok = g.gather_rows(table, ids);
    // Standard trigonometric-PE recipe: token embeddings are scaled by √d so
    // they are not drowned by the unit-magnitude sinusoids.
    let tok_scaled = g.scale(tok, (d as f64).sqrt());
    let pos = g.constant(positional_matrix(t_len, d)?);
    let mut h = g.add(tok_scaled, pos);

    for l in 0..cfg.layers {
        let p = format!("seq.l{l}");
        let (ln1g, ln1b) = (g.param(&format!("{p}.ln1.g")), g.param(&format!("{p}.ln1.b")));
        let a = g.layer_norm(h, ln1g, ln1b);

        let project = |g: &mut Graph, x: NodeId, w: &str, b: &str| {
            let w = g.param(w);
            let b = g.param(b);
            let xw = g.matmul(x, w);
            g.add_row_broadcast(xw, b)
        };
        let q = project(g, a, &format!("{p}.attn.wq"), &format!("{p}.attn.bq"));
        let k = project(g, a, &format!("{p}.attn.wk"), &format!("{p}.attn.bk"));
        let v = project(g, a, &format!("{p}.attn.wv"), &format!("{p}.attn.bv"));

        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let qh = g.slice_cols(q, hd * dh, dh);
            let kh = g.slice_cols(k, hd * dh, dh);
            let vh = g.slice_cols(v, hd * dh, dh);
            let kt = g.transpose(kh);
            let qk = g.matmul(qh, kt);
            let scaled = g.scale(qk, 1.0 / (dh as f64).sqrt());
            let masked = g.add_row_broadcast(scaled, key_mask);
            let attn = g.softmax_rows(masked);
            heads.push(g.matmul(attn, vh));
        }
        let concat = g.concat_cols(&heads);
        let o = project(
            g,
            concat,
            &format!("{p}.attn.wo"),
            &format!("{p}.attn.bo"),
        );
        h = g.add(h, o);

        let (ln2g, ln2b) = (g.param(&format!("{p}.ln2.g")), g.param(&format!("{p}.ln2.b")));
        let a2 = g.layer_norm(h, ln2g, ln2b);
        let f1 = project(g, a2, &format!("{p}.ff.w1"), &format!("{p}.ff.b1"));
        let f1a = g.gelu(f1);
        let f2 = project(g, f1a, &format!("{p}.ff.w2"), &format!("{p}.ff.b2"));
        h = g.add(h, f2);
    }

    let (fg, fb) = (g.param("seq.final_ln.g"), g.param("seq.final_ln.b"));
    let reps = g.layer_norm(h, fg, fb);
    let x1d = g.gather_rows(reps, &[0]);
    Ok(SeqForward { reps, x1d })
}

/// MLM head on an existing graph: rows of `reps` at the masked positions go
/// through the linear head and a row softmax, giving `[|M|, |V|]`
/// probabilities.
pub fn mlm_probs_graph(g: &mut Graph, reps: NodeId, mask_positions: &[usize]) -> NodeId {
    let rows = g.gather_rows(reps, mask_positions);
    let w = g.param("seq.mlm.w");
    let b = g.param("seq.mlm.b");
    let logits = g.matmul(rows, w);
    let biased = g.add_row_broadcast(logits, b);
    g.softmax_rows(biased)
}

/// Pure forward pass: `(token representations [T,d], X_1d [d])`.
pub fn encode_sequence(
    ids: &[usize],
    cfg: &SeqConfig,
    params: &ParamStore,
) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new(params);
    let fwd = seq_forward(&mut g, cfg, ids)?;
    g.check_fault()?;
    let reps = g.value(fwd.reps).clone();
    let x1d = Tensor::new(vec![cfg.dim], g.value(fwd.x1d).data().to_vec());
    Ok((reps, x1d))
}

/// Pure masked-prediction probabilities for the given positions.
pub fn mlm_probs(
    ids: &[usize],
    mask_positions: &[usize],
    cfg: &SeqConfig,
    params: &ParamStore,
) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let fwd = seq_forward(&mut g, cfg, ids)?;
    let probs = mlm_probs_graph(&mut g, fwd.reps, mask_positions);
    g.check_fault()?;
    Ok(g.value(probs).clone())
}
