//! Central-difference validation of reverse-mode gradients.

use std::collections::BTreeMap;

use rand::Rng;

use super::store::ParamStore;
use super::{Result, Tensor};

/// Outcome of a [`grad_check`] run.
#[derive(Debug)]
pub struct GradCheckReport {
    /// Number of sampled coordinates.
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(param, flat index, analytic, finite-difference, rel err)` for every
    /// coordinate exceeding the tolerance.
    pub failures: Vec<(String, usize, f64, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic gradients against central finite differences
/// `(f(θ+h) − f(θ−h)) / 2h` on `samples` randomly chosen trainable
/// coordinates (all coordinates when fewer exist).
///
/// `loss_fn` must re-evaluate the loss from the store; `analytic` holds the
/// reverse-mode gradients at the unperturbed point (params absent from the
/// map are treated as zero-gradient).
pub fn grad_check<F>(
    params: &mut ParamStore,
    mut loss_fn: F,
    analytic: &BTreeMap<String, Tensor>,
    h: f64,
    tol: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut coords: Vec<(String, usize)> = Vec::new();
    for name in params.names().map(str::to_string).collect::<Vec<_>>() {
        if !params.is_trainable(&name) {
            continue;
        }
        for i in 0..params.expect(&name).len() {
            coords.push((name.clone(), i));
        }
    }

    let picked: Vec<(String, usize)> = if coords.len() <= samples {
        coords
    } else {
        // Sample without replacement via partial Fisher-Yates.
        let mut pool = coords;
        let mut picked = Vec::with_capacity(samples);
        for _ in 0..samples {
            let j = rng.random_range(0..pool.len());
            picked.push(pool.swap_remove(j));
        }
        picked
    };

    let mut report = GradCheckReport {
        checked: picked.len(),
        max_rel_err: 0.0,
        failures: Vec::new(),
    };

    for (name, idx) in picked {
        let original = params.expect(&name).data()[idx];

        let mut probe = |value: f64, params: &mut ParamStore| -> Result<f64> {
            let mut t = params.expect(&name).clone();
            t.data_mut()[idx] = value;
            params.set_data(&name, t);
            loss_fn(params)
        };

        let plus = probe(original + h, params)?;
        let minus = probe(original - h, params)?;
        // Restore the coordinate exactly.
        probe(original, params)?;

        let fd = (plus - minus) / (2.0 * h);
        let an = analytic
            .get(&name)
            .map(|g| g.data()[idx])
            .unwrap_or(0.0);
        let err = rel_err(an, fd);
        report.max_rel_err = report.max_rel_err.max(err);
        if err > tol {
            report.failures.push((name.clone(), idx, an, fd, err));
        }
    }
    Ok(report)
}
