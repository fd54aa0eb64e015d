//! Define-by-run expression graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each op appends a node
//! holding its output tensor; node indices are therefore already in
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Non-finite op outputs do not panic: they poison the graph with a fault
//! that surfaces as a `NumericFailure` when values or gradients are read.

use std::collections::BTreeMap;

use super::kernels;
use super::store::ParamStore;
use super::{NumericsError, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    MatMul,
    Transpose,
    /// `[r,c] + [c]` broadcast over rows.
    AddRowBroadcast,
    /// `[r,c] * [r]` per-row scaling.
    MulColBroadcast,
    GatherRows(Vec<usize>),
    SliceCols {
        start: usize,
        len: usize,
    },
    ConcatCols,
    Reshape,
    SoftmaxRows,
    /// Parents: x `[r,c]`, gain `[c]`, bias `[c]`.
    LayerNorm,
    Gelu,
    /// Parent: probabilities `[m,v]`; labels index each row's true class.
    CrossEntropyProbs(Vec<usize>),
    /// Parents: pred `[n,c]`, target `[n,c]`.
    SmoothL1 {
        include: Vec<bool>,
    },
    /// Parents: two flat vectors of equal length.
    Cosine,
    /// Parents: v `[T²,dp]`, u `[T²,dp]`, mu `[dp]`, sigma `[dp]`.
    GaussianBasis {
        pair_types: Vec<usize>,
        dists: Vec<f64>,
    },
    /// Parents: rows*cols scalar nodes, row-major.
    StackScalars,
    SumList,
}

struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Tensor,
}

/// Expression graph bound to a parameter store for one forward/backward pass.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<String, usize>,
    store: &'p ParamStore,
    fault: Option<NumericsError>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            store,
            fault: None,
        }
    }

    fn push(&mut self, op: Op, parents: Vec<usize>, value: Tensor) -> NodeId {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(NumericsError::NumericFailure(format!(
                "non-finite output of {:?} node",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { op, parents, value });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Registers (or reuses) a leaf for a named parameter.
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&idx) = self.param_nodes.get(name) {
            return NodeId(idx);
        }
        let tensor = self.store.expect(name).clone();
        let id = self.push(Op::Leaf, vec![], tensor);
        self.param_nodes.insert(name.to_string(), id.0);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t)
    }

    /// Tensor value of a node (available immediately; define-by-run).
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.val(id)
    }

    /// Scalar value of a `[1]`-shaped node, checking the fault flag.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.check_fault()?;
        Ok(self.val(id).item())
    }

    pub fn check_fault(&self) -> Result<()> {
        match &self.fault {
            Some(NumericsError::NumericFailure(m)) => {
                Err(NumericsError::NumericFailure(m.clone()))
            }
            Some(NumericsError::ShapeMismatch(m)) => Err(NumericsError::ShapeMismatch(m.clone())),
            Some(NumericsError::ZeroVector(n)) => Err(NumericsError::ZeroVector(*n)),
            None => Ok(()),
        }
    }

    // ---- ops -------------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a).add(self.val(b));
        self.push(Op::Add, vec![a.0, b.0], v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a).sub(self.val(b));
        self.push(Op::Sub, vec![a.0, b.0], v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a).zip(self.val(b), |x, y| x * y);
        self.push(Op::Mul, vec![a.0, b.0], v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.val(a).scale(c);
        self.push(Op::Scale(c), vec![a.0], v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a).matmul(self.val(b));
        self.push(Op::MatMul, vec![a.0, b.0], v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).transpose();
        self.push(Op::Transpose, vec![a.0], v)
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let (m, vb) = (self.val(a), self.val(v));
        let (r, c) = (m.rows(), m.cols());
        assert_eq!(vb.len(), c, "row-broadcast length");
        let mut out = m.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += vb.data()[j];
            }
        }
        self.push(
            Op::AddRowBroadcast,
            vec![a.0, v.0],
            Tensor::new(vec![r, c], out),
        )
    }

    pub fn mul_col_broadcast(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let (m, vb) = (self.val(a), self.val(v));
        let (r, c) = (m.rows(), m.cols());
        assert_eq!(vb.len(), r, "col-broadcast length");
        let mut out = m.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] *= vb.data()[i];
            }
        }
        self.push(
            Op::MulColBroadcast,
            vec![a.0, v.0],
            Tensor::new(vec![r, c], out),
        )
    }

    /// Row gather: embedding lookup / row selection with scatter-add backward.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.val(table);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            assert!(i < r, "gather_rows index {i} out of {r}");
            out.extend_from_slice(t.row(i));
        }
        self.push(
            Op::GatherRows(ids.to_vec()),
            vec![table.0],
            Tensor::new(vec![ids.len(), c], out),
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let m = self.val(a);
        let (r, c) = (m.rows(), m.cols());
        assert!(start + len <= c, "slice_cols out of range");
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&m.row(i)[start..start + len]);
        }
        self.push(
            Op::SliceCols { start, len },
            vec![a.0],
            Tensor::new(vec![r, len], out),
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let r = self.val(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.val(p).row(i));
            }
        }
        self.push(
            Op::ConcatCols,
            parts.iter().map(|p| p.0).collect(),
            Tensor::new(vec![r, total], out),
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> NodeId {
        let v = self.val(a);
        assert_eq!(
            v.len(),
            shape.iter().product::<usize>(),
            "reshape element count"
        );
        let out = Tensor::new(shape, v.data().to_vec());
        self.push(Op::Reshape, vec![a.0], out)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = kernels::softmax_rows_unchecked(self.val(a));
        self.push(Op::SoftmaxRows, vec![a.0], v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let v = kernels::layer_norm(
            self.val(x),
            self.val(gain).data(),
            self.val(bias).data(),
            kernels::LAYER_NORM_EPS,
        );
        self.push(Op::LayerNorm, vec![x.0, gain.0, bias.0], v)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(kernels::gelu);
        self.push(Op::Gelu, vec![a.0], v)
    }

    pub fn cross_entropy_probs(&mut self, probs: NodeId, labels: &[usize]) -> NodeId {
        let l = match kernels::cross_entropy(self.val(probs), labels) {
            Ok(l) => l,
            Err(e) => {
                if self.fault.is_none() {
                    self.fault = Some(e);
                }
                f64::NAN
            }
        };
        let value = Tensor::scalar(if l.is_finite() { l } else { 0.0 });
        self.push(Op::CrossEntropyProbs(labels.to_vec()), vec![probs.0], value)
    }

    pub fn smooth_l1(&mut self, pred: NodeId, target: NodeId, include: &[bool]) -> NodeId {
        let l = kernels::smooth_l1(self.val(pred), self.val(target), include)
            .expect("smooth_l1 shapes validated by caller");
        self.push(
            Op::SmoothL1 {
                include: include.to_vec(),
            },
            vec![pred.0, target.0],
            Tensor::scalar(l),
        )
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = match kernels::cosine_similarity(self.val(a).data(), self.val(b).data()) {
            Ok(s) => s,
            Err(e) => {
                if self.fault.is_none() {
                    self.fault = Some(e);
                }
                0.0
            }
        };
        self.push(Op::Cosine, vec![a.0, b.0], Tensor::scalar(s))
    }

    /// Pair-type aware Gaussian basis over fixed pair distances.
    ///
    /// Entry `[e,k]` is `G(v[t_e,k]·d_e + u[t_e,k] − μ[k], max(σ[k], floor))`
    /// with `G` the normalized Gaussian density.
    pub fn gaussian_basis(
        &mut self,
        v: NodeId,
        u: NodeId,
        mu: NodeId,
        sigma: NodeId,
        pair_types: &[usize],
        dists: &[f64],
    ) -> NodeId {
        assert_eq!(pair_types.len(), dists.len());
        let dp = self.val(mu).len();
        let (vt, ut) = (self.val(v), self.val(u));
        assert_eq!(vt.cols(), dp);
        assert_eq!(ut.cols(), dp);
        let (mu_d, sig_d) = (self.val(mu).data(), self.val(sigma).data());
        let n = pair_types.len();
        let mut out = Vec::with_capacity(n * dp);
        for (e, (&t, &d)) in pair_types.iter().zip(dists).enumerate() {
            let _ = e;
            for k in 0..dp {
                let s = sig_d[k].max(kernels::SIGMA_FLOOR);
                let x = vt.at(t, k) * d + ut.at(t, k) - mu_d[k];
                out.push(kernels::gaussian_density(x, s));
            }
        }
        self.push(
            Op::GaussianBasis {
                pair_types: pair_types.to_vec(),
                dists: dists.to_vec(),
            },
            vec![v.0, u.0, mu.0, sigma.0],
            Tensor::new(vec![n, dp], out),
        )
    }

    /// Assemble scalar nodes into a `[rows, cols]` matrix (row-major order).
    pub fn stack_scalars(&mut self, scalars: &[NodeId], rows: usize, cols: usize) -> NodeId {
        assert_eq!(scalars.len(), rows * cols);
        let data: Vec<f64> = scalars.iter().map(|&s| self.val(s).item()).collect();
        self.push(
            Op::StackScalars,
            scalars.iter().map(|s| s.0).collect(),
            Tensor::new(vec![rows, cols], data),
        )
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum_list(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut acc = self.val(parts[0]).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.val(p));
        }
        self.push(Op::SumList, parts.iter().map(|p| p.0).collect(), acc)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse accumulation from a scalar loss down to every trainable
    /// parameter leaf reachable from it.
    pub fn backward(&self, loss: NodeId) -> Result<BTreeMap<String, Tensor>> {
        self.check_fault()?;
        assert_eq!(self.val(loss).len(), 1, "backward from non-scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(
            self.val(loss).shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contribs = self.parent_grads(node, &g);
            for (slot, grad) in node.parents.iter().zip(contribs) {
                let Some(grad) = grad else { continue };
                match &mut grads[*slot] {
                    Some(acc) => acc.add_assign(&grad),
                    empty => *empty = Some(grad),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let mut out = BTreeMap::new();
        for (name, &idx) in &self.param_nodes {
            if let Some(g) = grads[idx].take() {
                g.ensure_finite(&format!("gradient of {name}"))?;
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn parent_grads(&self, node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
        let pv = |i: usize| &self.nodes[node.parents[i]].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.scale(-1.0))],
            Op::Mul => vec![
                Some(g.zip(pv(1), |gi, b| gi * b)),
                Some(g.zip(pv(0), |gi, a| gi * a)),
            ],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::MatMul => {
                let (a, b) = (pv(0), pv(1));
                vec![
                    Some(g.matmul(&b.transpose())),
                    Some(a.transpose().matmul(g)),
                ]
            }
            Op::Transpose => vec![Some(g.transpose())],
            Op::AddRowBroadcast => {
                let c = g.cols();
                let mut dv = vec![0.0; c];
                for i in 0..g.rows() {
                    for (j, dvj) in dv.iter_mut().enumerate() {
                        *dvj += g.at(i, j);
                    }
                }
                vec![Some(g.clone()), Some(Tensor::new(vec![c], dv))]
            }
            Op::MulColBroadcast => {
                let (a, v) = (pv(0), pv(1));
                let (r, c) = (a.rows(), a.cols());
                let mut da = vec![0.0; r * c];
                let mut dv = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g.at(i, j) * v.data()[i];
                        dv[i] += g.at(i, j) * a.at(i, j);
                    }
                }
                vec![
                    Some(Tensor::new(vec![r, c], da)),
                    Some(Tensor::new(v.shape().to_vec(), dv)),
                ]
            }
            Op::GatherRows(ids) => {
                let table = pv(0);
                let mut dt = Tensor::zeros(table.shape().to_vec());
                let c = table.cols();
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        dt.data_mut()[i * c + j] += g.at(r, j);
                    }
                }
                vec![Some(dt)]
            }
            Op::SliceCols { start, len } => {
                let a = pv(0);
                let (r, c) = (a.rows(), a.cols());
                let mut da = Tensor::zeros(vec![r, c]);
                for i in 0..r {
                    for j in 0..*len {
                        da.data_mut()[i * c + start + j] = g.at(i, j);
                    }
                }
                vec![Some(da)]
            }
            Op::ConcatCols => {
                let mut offs = 0;
                let mut out = Vec::with_capacity(node.parents.len());
                for p in 0..node.parents.len() {
                    let part = pv(p);
                    let (r, c) = (part.rows(), part.cols());
                    let mut dp = Vec::with_capacity(r * c);
                    for i in 0..r {
                        dp.extend_from_slice(&g.row(i)[offs..offs + c]);
                    }
                    offs += c;
                    out.push(Some(Tensor::new(vec![r, c], dp)));
                }
                out
            }
            Op::Reshape => {
                let a = pv(0);
                vec![Some(Tensor::new(a.shape().to_vec(), g.data().to_vec()))]
            }
            Op::SoftmaxRows => {
                let p = &node.value;
                let (r, c) = (p.rows(), p.cols());
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let dot: f64 = (0..c).map(|j| g.at(i, j) * p.at(i, j)).sum();
                    for j in 0..c {
                        dx[i * c + j] = p.at(i, j) * (g.at(i, j) - dot);
                    }
                }
                vec![Some(Tensor::new(vec![r, c], dx))]
            }
            Op::LayerNorm => {
                let (x, gain) = (pv(0), pv(1));
                let (r, c) = (x.rows(), x.cols());
                let eps = kernels::LAYER_NORM_EPS;
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i in 0..r {
                    let row = x.row(i);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dy: Vec<f64> = (0..c).map(|j| g.at(i, j)).collect();
                    let dxhat: Vec<f64> =
                        (0..c).map(|j| dy[j] * gain.data()[j]).collect();
                    let m1 = dxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                        dgain[j] += dy[j] * xhat[j];
                        dbias[j] += dy[j];
                    }
                }
                vec![
                    Some(Tensor::new(vec![r, c], dx)),
                    Some(Tensor::new(vec![c], dgain)),
                    Some(Tensor::new(vec![c], dbias)),
                ]
            }
            Op::Gelu => {
                let x = pv(0);
                vec![Some(g.zip(x, |gi, xi| gi * kernels::gelu_grad(xi)))]
            }
            Op::CrossEntropyProbs(labels) => {
                let p = pv(0);
                let (m, v) = (p.rows(), p.cols());
                let mut dp = Tensor::zeros(vec![m, v]);
                if !labels.is_empty() {
                    let go = g.item();
                    for (i, &y) in labels.iter().enumerate() {
                        let prob = p.at(i, y);
                        // Clamped probabilities carry no gradient.
                        if prob > kernels::CE_PROB_CLAMP {
                            dp.set(i, y, -go / (m as f64 * prob));
                        }
                    }
                }
                vec![Some(dp)]
            }
            Op::SmoothL1 { include } => {
                let (pred, target) = (pv(0), pv(1));
                let (n, c) = (pred.rows(), pred.cols());
                let n_incl = include.iter().filter(|&&b| b).count();
                let mut dpred = Tensor::zeros(vec![n, c]);
                if n_incl > 0 {
                    let w = g.item() / (n_incl * c) as f64;
                    for i in 0..n {
                        if !include[i] {
                            continue;
                        }
                        for j in 0..c {
                            let e = pred.at(i, j) - target.at(i, j);
                            dpred.set(i, j, w * kernels::smooth_l1_dpred(e));
                        }
                    }
                }
                let dtarget = dpred.scale(-1.0);
                vec![Some(dpred), Some(dtarget)]
            }
            Op::Cosine => {
                let (a, b) = (pv(0), pv(1));
                let s = node.value.item();
                let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                let go = g.item();
                let da: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&ai, &bi)| go * (bi / (na * nb) - s * ai / (na * na)))
                    .collect();
                let db: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&ai, &bi)| go * (ai / (na * nb) - s * bi / (nb * nb)))
                    .collect();
                vec![
                    Some(Tensor::new(a.shape().to_vec(), da)),
                    Some(Tensor::new(b.shape().to_vec(), db)),
                ]
            }
            Op::GaussianBasis { pair_types, dists } => {
                let (v, u, mu, sigma) = (pv(0), pv(1), pv(2), pv(3));
                let dp_dim = mu.len();
                let mut dv = Tensor::zeros(v.shape().to_vec());
                let mut du = Tensor::zeros(u.shape().to_vec());
                let mut dmu = vec![0.0; dp_dim];
                let mut dsigma = vec![0.0; dp_dim];
                for (e, (&t, &d)) in pair_types.iter().zip(dists).enumerate() {
                    for k in 0..dp_dim {
                        let s_raw = sigma.data()[k];
                        let s = s_raw.max(kernels::SIGMA_FLOOR);
                        let x = v.at(t, k) * d + u.at(t, k) - mu.data()[k];
                        let gval = node.value.at(e, k);
                        let go = g.at(e, k);
                        let dgdx = gval * (-x / (s * s));
                        dv.data_mut()[t * dp_dim + k] += go * dgdx * d;
                        du.data_mut()[t * dp_dim + k] += go * dgdx;
                        dmu[k] -= go * dgdx;
                        if s_raw >= kernels::SIGMA_FLOOR {
                            dsigma[k] += go * gval * (x * x / (s * s * s) - 1.0 / s);
                        }
                    }
                }
                vec![
                    Some(dv),
                    Some(du),
                    Some(Tensor::new(mu.shape().to_vec(), dmu)),
                    Some(Tensor::new(sigma.shape().to_vec(), dsigma)),
                ]
            }
            Op::StackScalars => (0..node.parents.len())
                .map(|e| Some(Tensor::scalar(g.data()[e])))
                .collect(),
            Op::SumList => node.parents.iter().map(|_| Some(g.clone())).collect(),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Scale(_) => "scale",
        Op::MatMul => "matmul",
        Op::Transpose => "transpose",
        Op::AddRowBroadcast => "add_row_broadcast",
        Op::MulColBroadcast => "mul_col_broadcast",
        Op::GatherRows(_) => "gather_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols => "concat_cols",
        Op::Reshape => "reshape",
        Op::SoftmaxRows => "softmax_rows",
        Op::LayerNorm => "layer_norm",
        Op::Gelu => "gelu",
        Op::CrossEntropyProbs(_) => "cross_entropy",
        Op::SmoothL1 { .. } => "smooth_l1",
        Op::Cosine => "cosine",
        Op::GaussianBasis { .. } => "gaussian_basis",
        Op::StackScalars => "stack_scalars",
        Op::SumList => "sum_list",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::scalar(3.0));
        let mut g = Graph::new(&store);
        let th = g.param("theta");
        let sq = g.mul(th, th);
        let loss = g.scale(sq, 0.5);
        assert_eq!(g.scalar(loss).unwrap(), 4.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["theta"].item(), 3.0);
    }

    #[test]
    fn fault_poisons_graph() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1e308));
        let mut g = Graph::new(&store);
        let x = g.param("x");
        let y = g.mul(x, x); // overflows to +inf
        assert!(g.scalar(y).is_err());
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn unused_param_gets_no_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(2.0));
        store.insert("b", Tensor::scalar(5.0));
        let mut g = Graph::new(&store);
        let a = g.param("a");
        let _b = g.param("b");
        let loss = g.mul(a, a);
        let grads = g.backward(loss).unwrap();
        assert!(grads.contains_key("a"));
        assert!(!grads.contains_key("b"));
    }
}
