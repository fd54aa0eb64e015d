//! Forward implementations of the shared loss/activation kernels.
//!
//! These are the single source of truth for the math; the autodiff graph ops
//! in [`super::Graph`] call into them for their forward passes.

use super::{NumericsError, Result, Tensor};

/// Probabilities below this are clamped before `log` in cross-entropy.
pub const CE_PROB_CLAMP: f64 = 1e-12;

/// Layer-normalization variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floor applied to Gaussian-basis standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-2;

/// Row-wise softmax, stabilized by row-max subtraction.
///
/// Rejects non-finite input; rows of the output are nonnegative and sum to 1
/// within 1e-12.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.ensure_finite("softmax_rows input")?;
    Ok(softmax_rows_unchecked(x))
}

/// Softmax that tolerates large negative entries (attention masking uses
/// -1e30 as "minus infinity"); callers guarantee no NaN/+inf.
pub(super) fn softmax_rows_unchecked(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[i * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            out[i * c + j] /= sum;
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`.
///
/// `probs` is `[m, v]` with rows summing to 1; `labels[i]` indexes row `i`'s
/// true class. Returns 0 for an empty label set. Probabilities are clamped
/// at [`CE_PROB_CLAMP`] before the log.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    probs.ensure_finite("cross_entropy probabilities")?;
    let (m, v) = (probs.rows(), probs.cols());
    if m != labels.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "cross_entropy: {m} probability rows vs {} labels",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= v {
            return Err(NumericsError::ShapeMismatch(format!(
                "cross_entropy: label {y} out of range for {v} classes"
            )));
        }
        total -= probs.at(i, y).max(CE_PROB_CLAMP).ln();
    }
    Ok(total / m as f64)
}

/// Smooth L1 (Huber with unit transition) averaged over included rows × 3
/// components: `0.5 e²` for `|e| < 1`, else `|e| − 0.5`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor, include: &[bool]) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(NumericsError::ShapeMismatch(format!(
            "smooth_l1: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (n, c) = (pred.rows(), pred.cols());
    if include.len() != n {
        return Err(NumericsError::ShapeMismatch(format!(
            "smooth_l1: {n} rows vs {} include flags",
            include.len()
        )));
    }
    let n_incl = include.iter().filter(|&&b| b).count();
    if n_incl == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        if !include[i] {
            continue;
        }
        for j in 0..c {
            let e = (pred.at(i, j) - target.at(i, j)).abs();
            total += if e < 1.0 { 0.5 * e * e } else { e - 0.5 };
        }
    }
    Ok(total / (n_incl * c) as f64)
}

/// Per-element smooth-L1 derivative w.r.t. the prediction (before the mean).
pub(super) fn smooth_l1_dpred(e: f64) -> f64 {
    if e.abs() < 1.0 {
        e
    } else {
        e.signum()
    }
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`; errors on (near-)zero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "cosine: {} vs {} components",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let floor = 1e-30;
    if na < floor || nb < floor {
        return Err(NumericsError::ZeroVector(na.min(nb)));
    }
    Ok(dot / (na * nb))
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of the tanh-approximated GELU.
pub fn gelu_grad(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    let inner = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Row-wise layer normalization with learnable gain/bias.
pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64], eps: f64) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    assert_eq!(gain.len(), c, "layer_norm gain length");
    assert_eq!(bias.len(), c, "layer_norm bias length");
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..c {
            out[i * c + j] = (row[j] - mean) * inv * gain[j] + bias[j];
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Normalized Gaussian density `exp(−x²/2s²) / (s√(2π))`.
pub fn gaussian_density(x: f64, s: f64) -> f64 {
    const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
    (-x * x / (2.0 * s * s)).exp() / (s * SQRT_2PI)
}
