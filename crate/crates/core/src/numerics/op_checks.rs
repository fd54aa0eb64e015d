//! Finite-difference checks for every differentiable primitive.
//!
//! Each test builds a small random graph ending in a scalar loss (a fixed
//! random-weighted sum of the op's output), computes reverse-mode gradients,
//! and compares them against central differences at h = 1e-5 / rel err 1e-4.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, Graph, NodeId, ParamStore, Result, Tensor};

fn rand_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data)
}

/// Reduces any node to a scalar via a fixed random-weighted sum, so that
/// every output entry contributes to the loss.
fn weighted_sum(g: &mut Graph, x: NodeId, weights: &Tensor) -> NodeId {
    let flat_len = g.value(x).len();
    assert_eq!(weights.len(), flat_len);
    let x2 = g.reshape(x, vec![1, flat_len]);
    let w = g.constant(Tensor::new(vec![1, flat_len], weights.data().to_vec()));
    let prod = g.mul(x2, w);
    let ones = g.constant(Tensor::new(vec![flat_len, 1], vec![1.0; flat_len]));
    g.matmul(prod, ones)
}

/// Runs grad_check for a graph builder over the given parameter store,
/// sampling every trainable coordinate.
fn check<F>(params: &mut ParamStore, build: F)
where
    F: Fn(&mut Graph) -> NodeId,
{
    let analytic: BTreeMap<String, Tensor> = {
        let mut g = Graph::new(params);
        let loss = build(&mut g);
        g.backward(loss).unwrap()
    };
    let loss_fn = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = build(&mut g);
        g.scalar(loss)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let report = grad_check(
        params,
        loss_fn,
        &analytic,
        1e-5,
        1e-4,
        params.total_elements(),
        &mut rng,
    )
    .unwrap();
    assert!(
        report.passed(),
        "gradcheck failures (max rel err {:.3e}): {:?}",
        report.max_rel_err,
        report.failures
    );
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamStore::new();
    params.insert("a", rand_tensor(vec![3,
4], &mut rng));
    params.insert("b", rand_tensor(vec![4, 2], &mut rng));
    let w = rand_tensor(vec![6], &mut rng);
    check(&mut params, move |g| {
        let a = g.param("a");
        let b = g.param("b");
        let c = g.matmul(a, b);
        weighted_sum(g, c, &w)
    });
}

#[test]
fn softmax_rows_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamStore::new();
    params.insert("x", rand_tensor(vec![3, 5], &mut rng));
    let w = rand_tensor(vec![15], &mut rng);
    check(&mut params, move |g| {
        let x = g.param("x");
        let p = g.softmax_rows(x);
        weighted_sum(g, p, &w)
    });
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamStore::new();
    params.insert("x", rand_tensor(vec![4, 6], &mut rng));
    params.insert("gain", rand_tensor(vec![6], &mut rng));
    params.insert("bias", rand_tensor(vec![6], &mut rng));
    let w = rand_tensor(vec![24], &mut rng);
    check(&mut params, move |g| {
        let x = g.param("x");
        let gain = g.param("gain");
        let bias = g.param("bias");
        let y = g.layer_norm(x, gain, bias);
        weighted_sum(g, y, &w)
    });
}

#[test]
fn gelu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamStore::new();
    params.insert("x", rand_tensor(vec![3, 3], &mut rng));
    let w = rand_tensor(vec![9], &mut rng);
    check(&mut params, move |g| {
        let x = g.param("x");
        let y = g.gelu(x);
        weighted_sum(g, y, &w)
    });
}

#[test]
fn embedding_lookup_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamStore::new();
    params.insert("table", rand_tensor(vec![6, 4], &mut rng));
    let w = rand_tensor(vec![12], &mut rng);
    check(&mut params, move |g| {
        let t = g.param("table");
        // Repeated index exercises scatter-add accumulation.
        let got = g.gather_rows(t, &[0, 3, 0]);
        weighted_sum(g, got, &w)
    });
}

#[test]
fn softmax_cross_entropy_composite_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = ParamStore::new();
    params.insert("logits", rand_tensor(vec![4, 5], &mut rng));
    check(&mut params, |g| {
        let x = g.param("logits");
        let p = g.softmax_rows(x);
        g.cross_entropy_probs(p, &[1, 0, 4, 2])
    });
}

#[test]
fn smooth_l1_gradients_both_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamStore::new();
    // Mix of |e| < 1 and |e| > 1 entries, away from the |e| = 1 kink.
    let pred = Tensor::new(
        vec![3, 3],
        vec![0.2, -0.4, 2.3, -1.7, 0.05, 0.6, 3.0, -2.5, 0.0],
    );
    params.insert("pred", pred);
    let _ = &mut rng;
    check(&mut params, |g| {
        let p = g.param("pred");
        let t = g.constant(Tensor::zeros(vec![3, 3]));
        g.smooth_l1(p, t, &[true, false, true])
    });
}

#[test]
fn cosine_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ParamStore::new();
    params.insert("a", rand_tensor(vec![1, 5], &mut rng));
    params.insert("b", rand_tensor(vec![1, 5], &mut rng));
    check(&mut params, |g| {
        let a = g.param("a");
        let b = g.param("b");
        g.cosine(a, b)
    });
}

#[test]
fn infonce_composite_gradients() {
    // Cosine similarities -> stack -> temperature -> softmax -> cross-entropy,
    // exactly the contrastive-loss wiring.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ParamStore::new();
    for i in 0..3 {
        params.insert(&format!("u{i}"), rand_tensor(vec![1, 4], &mut rng));
        params.insert(&format!("v{i}"), rand_tensor(vec![1, 4], &mut rng));
    }
    check(&mut params, |g| {
        let mut sims = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let u = g.param(&format!("u{i}"));
                let v = g.param(&format!("v{j}"));
                sims.push(g.cosine(u, v));
            }
        }
        let s = g.stack_scalars(&sims, 3, 3);
        let scaled = g.scale(s, 1.0 / 0.1);
        let p = g.softmax_rows(scaled);
        g.cross_entropy_probs(p, &[0, 1, 2])
    });
}

#[test]
fn gaussian_basis_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dp = 4;
    let n_types = 3; // 9 ordered pairs
    let mut params = ParamStore::new();
    params.insert(
        "v",
        rand_tensor(vec![n_types * n_types, dp], &mut rng).map(|x| 1.0 + 0.3 * x),
    );
    params.insert("u", rand_tensor(vec![n_types * n_types, dp], &mut rng));
    params.insert("mu", rand_tensor(vec![dp], &mut rng).map(|x| 2.0 + x));
    params.insert("sigma", rand_tensor(vec![dp], &mut rng).map(|x| 1.0 + 0.4 * x));
    let pair_types = vec![0, 4, 8, 2, 6];
    let dists = vec![1.5, 2.2, 0.9, 3.1, 1.1];
    let w = rand_tensor(vec![5 * dp], &mut rng);
    check(&mut params, move |g| {
        let v = g.param("v");
        let u = g.param("u");
        let mu = g.param("mu");
        let sigma = g.param("sigma");
        let basis = g.gaussian_basis(v, u, mu, sigma, &pair_types, &dists);
        weighted_sum(g, basis, &w)
    });
}

#[test]
fn coordinate_update_composite_gradients() {
    // The pair-weight -> displacement decoder: p_hat = p + (rowsum(W)*p - W*p)/n.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4;
    let mut params = ParamStore::new();
    params.insert("w_flat", rand_tensor(vec![n * n, 1], &mut rng));
    let coords = rand_tensor(vec![n, 3], &mut rng).scale(3.0);
    let target = rand_tensor(vec![n, 3], &mut rng).scale(3.0);
    check(&mut params, move |g| {
        let w_flat = g.param("w_flat");
        let w = g.reshape(w_flat, vec![n, n]);
        let p = g.constant(coords.clone());
        let ones = g.constant(Tensor::new(vec![n, 1], vec![1.0; n]));
        let rowsum_m = g.matmul(w, ones);
        let rowsum = g.reshape(rowsum_m, vec![n]);
        let scaled_p = g.mul_col_broadcast(p, rowsum);
        let wp = g.matmul(w, p);
        let diff = g.sub(scaled_p, wp);
        let upd = g.scale(diff, 1.0 / n as f64);
        let p_hat = g.add(p, upd);
        let t = g.constant(target.clone());
        g.smooth_l1(p_hat, t, &[false, true, true, true])
    });
}

#[test]
fn broadcast_slice_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = ParamStore::new();
    params.insert("x", rand_tensor(vec![3, 6], &mut rng));
    params.insert("bias", rand_tensor(vec![6], &mut rng));
    params.insert("rowscale", rand_tensor(vec![3], &mut rng));
    let w = rand_tensor(vec![18], &mut rng);
    check(&mut params, move |g| {
        let x = g.param("x");
        let b = g.param("bias");
        let s = g.param("rowscale");
        let xb = g.add_row_broadcast(x, b);
        let xs = g.mul_col_broadcast(xb, s);
        let left = g.slice_cols(xs, 0, 2);
        let right = g.slice_cols(xs, 2, 4);
        let t = g.transpose(right);
        let back = g.transpose(t);
        let cat = g.concat_cols(&[left, back]);
        weighted_sum(g, cat, &w)
    });
}

#[test]
fn elementwise_and_sum_list_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut params = ParamStore::new();
    params.insert("a", rand_tensor(vec![2, 3], &mut rng));
    params.insert("b", rand_tensor(vec![2, 3], &mut rng));
    let w = rand_tensor(vec![6], &mut rng);
    check(&mut params, move |g| {
        let a = g.param("a");
        let b = g.param("b");
        let s = g.sub(a, b);
        let m = g.mul(s, a);
        let sc = g.scale(m, 0.7);
        let total = g.sum_list(&[sc, m, s]);
        weighted_sum(g, total, &w)
    });
}
