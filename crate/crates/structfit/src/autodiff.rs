//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Tape`] records a single computation as a topologically ordered list of
//! primitive nodes. Values are computed eagerly as ops are recorded;
//! [`Tape::recompute`] re-runs the same graph after parameter updates, and
//! [`Tape::backward`] accumulates exact adjoints for every registered
//! parameter in one deterministic reverse sweep.
//!
//! The primitive set is exactly what the message-passing architectures and
//! their losses need: dense matmul, elementwise (leaky) ReLU, row/segment
//! sums, gather/scatter over edge lists, per-segment softmax for neighbor
//! attention, and the three losses. Everything is float64.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("backward target must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("non-finite loss while evaluating perturbed point")]
    NonFinite,
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Handle to a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

enum Op {
    Const,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + bias` with `bias` broadcast over rows; bias is `1 x d`.
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Row `i` multiplied by the constant factor `w[i]`.
    ScaleRows(NodeId, Arc<Vec<f64>>),
    /// Elementwise product with a constant mask (dropout).
    HadamardConst(NodeId, Arc<Array2<f64>>),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    /// `m x d -> 1 x d`.
    RowSum(NodeId),
    /// Rows grouped by segment id -> `segments x d`.
    SegmentSum(NodeId, Arc<Vec<usize>>, usize),
    /// Row selection: `out[k, :] = a[idx[k], :]`.
    Gather(NodeId, Arc<Vec<usize>>),
    /// `out[idx[k], :] += a[k, :]` into `rows` output rows.
    ScatterAdd(NodeId, Arc<Vec<usize>>, usize),
    /// Softmax of an `E x 1` logit column within each segment.
    SegmentSoftmax(NodeId, Arc<Vec<usize>>),
    /// `E x d` rows scaled by an `E x 1` column.
    RowwiseMul(NodeId, NodeId),
    /// Per-row dot product of two `E x d` matrices -> `E x 1`.
    RowwiseDot(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    /// Mean logistic loss of `m x 1` scores against +-1 labels.
    LogisticLoss(NodeId, Arc<Vec<f64>>),
    /// Mean exponential loss of `m x 1` scores against +-1 labels.
    ExpLoss(NodeId, Arc<Vec<f64>>),
    /// Mean softmax cross-entropy of `m x C` logits against class indices.
    SoftmaxXent(NodeId, Arc<Vec<usize>>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Recorded computation with registered parameters.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    grads: Vec<Array2<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, v: Array2<f64>) -> NodeId {
        self.push(Op::Const, v)
    }

    /// Registers a trainable parameter; gradients accumulate per parameter in
    /// registration order.
    pub fn param(&mut self, name: &str, v: Array2<f64>) -> ParamId {
        let id = self.push(Op::Param, v);
        self.params.push((name.to_string(), id));
        ParamId(self.params.len() - 1)
    }

    pub fn param_node(&self, p: ParamId) -> NodeId {
        self.params[p.0].1
    }

    pub fn param_name(&self, p: ParamId) -> &str {
        &self.params[p.0].0
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_value(&self, p: ParamId) -> &Array2<f64> {
        self.value(self.params[p.0].1)
    }

    /// Overwrites a parameter value (shape must match); call
    /// [`Tape::recompute`] afterwards.
    pub fn set_param(&mut self, p: ParamId, v: &Array2<f64>) {
        let node = self.params[p.0].1;
        assert_eq!(self.nodes[node.0].value.dim(), v.dim(), "parameter shape changed");
        self.nodes[node.0].value.assign(v);
    }

    /// Gradient of the last [`Tape::backward`] call for parameter `p`.
    pub fn grad(&self, p: ParamId) -> &Array2<f64> {
        &self.grads[p.0]
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions differ");
            va.dot(vb)
        };
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.dim(), vb.dim(), "add shapes differ");
            va + vb
        };
        self.push(Op::Add(a, b), v)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = {
            let (va, vb) = (self.value(a), self.value(bias));
            assert_eq!(vb.nrows(), 1, "bias must be a single row");
            assert_eq!(va.ncols(), vb.ncols(), "bias width differs");
            va + &vb.row(0)
        };
        self.push(Op::AddBias(a, bias), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn scale_rows(&mut self, a: NodeId, w: Vec<f64>) -> NodeId {
        assert_eq!(self.value(a).nrows(), w.len(), "one factor per row required");
        let w = Arc::new(w);
        let mut v = self.value(a).clone();
        for (mut row, &f) in v.rows_mut().into_iter().zip(w.iter()) {
            row *= f;
        }
        self.push(Op::ScaleRows(a, w), v)
    }

    pub fn hadamard_const(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        assert_eq!(self.value(a).dim(), mask.dim(), "mask shape differs");
        let mask = Arc::new(mask);
        let v = self.value(a) * &*mask;
        self.push(Op::HadamardConst(a, mask), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::RowSum(a), v)
    }

    pub fn segment_sum(&mut self, a: NodeId, seg: Vec<usize>, segments: usize) -> NodeId {
        assert_eq!(self.value(a).nrows(), seg.len(), "one segment id per row required");
        assert!(seg.iter().all(|&s| s < segments), "segment id out of range");
        let seg = Arc::new(seg);
        let v = segment_sum_values(self.value(a), &seg, segments);
        self.push(Op::SegmentSum(a, seg, segments), v)
    }

    pub fn gather(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        assert!(idx.iter().all(|&i| i < self.value(a).nrows()), "gather index out of range");
        let idx = Arc::new(idx);
        let d = self.value(a).ncols();
        let mut v = Array2::zeros((idx.len(), d));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&self.value(a).row(i));
        }
        self.push(Op::Gather(a, idx), v)
    }

    pub fn scatter_add(&mut self, a: NodeId, idx: Vec<usize>, rows: usize) -> NodeId {
        assert_eq!(self.value(a).nrows(), idx.len(), "one target per row required");
        assert!(idx.iter().all(|&i| i < rows), "scatter index out of range");
        let idx = Arc::new(idx);
        let d = self.value(a).ncols();
        let mut v = Array2::zeros((rows, d));
        for (k, &i) in idx.iter().enumerate() {
            let mut row = v.row_mut(i);
            row += &self.value(a).row(k);
        }
        self.push(Op::ScatterAdd(a, idx, rows), v)
    }

    /// Softmax within each segment of an `E x 1` logit column. Rows of a
    /// nonempty segment sum to 1; empty segments simply have no rows, which
    /// realizes the empty-neighborhood convention (zero contribution, no NaN).
    pub fn segment_softmax(&mut self, logits: NodeId, seg: Vec<usize>) -> NodeId {
        assert_eq!(self.value(logits).ncols(), 1, "segment softmax expects a column");
        assert_eq!(self.value(logits).nrows(), seg.len(), "one segment id per logit");
        let seg = Arc::new(seg);
        let v = segment_softmax_values(self.value(logits), &seg);
        self.push(Op::SegmentSoftmax(logits, seg), v)
    }

    pub fn rowwise_mul(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let v = {
            let (va, vs) = (self.value(a), self.value(s));
            assert_eq!(vs.ncols(), 1, "row factors must be a column");
            assert_eq!(va.nrows(), vs.nrows(), "row counts differ");
            let mut v = va.clone();
            for (mut row, f) in v.rows_mut().into_iter().zip(vs.column(0).iter()) {
                row *= *f;
            }
            v
        };
        self.push(Op::RowwiseMul(a, s), v)
    }

    pub fn rowwise_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.dim(), vb.dim(), "rowwise dot shapes differ");
            let mut v = Array2::zeros((va.nrows(), 1));
            for (k, (ra, rb)) in va.rows().into_iter().zip(vb.rows()).enumerate() {
                v[[k, 0]] = ra.dot(&rb);
            }
            v
        };
        self.push(Op::RowwiseDot(a, b), v)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.ncols(), vb.ncols(), "concat widths differ");
            ndarray::concatenate![Axis(0), va.view(), vb.view()]
        };
        self.push(Op::ConcatRows(a, b), v)
    }

    pub fn logistic_loss(&mut self, scores: NodeId, y: Vec<f64>) -> NodeId {
        self.check_binary(scores, &y);
        let y = Arc::new(y);
        let s = self.value(scores);
        // ln(1 + e^z) = max(z, 0) + ln(1 + e^-|z|)
        let total: f64 = s
            .column(0)
            .iter()
            .zip(y.iter())
            .map(|(&si, &yi)| {
                let z = -yi * si;
                z.max(0.0) + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let v = Array2::from_elem((1, 1), total / y.len() as f64);
        self.push(Op::LogisticLoss(scores, y), v)
    }

    pub fn exp_loss(&mut self, scores: NodeId, y: Vec<f64>) -> NodeId {
        self.check_binary(scores, &y);
        let y = Arc::new(y);
        let s = self.value(scores);
        let total: f64 =
            s.column(0).iter().zip(y.iter()).map(|(&si, &yi)| (-yi * si).exp()).sum();
        let v = Array2::from_elem((1, 1), total / y.len() as f64);
        self.push(Op::ExpLoss(scores, y), v)
    }

    pub fn softmax_xent(&mut self, logits: NodeId, y: Vec<usize>) -> NodeId {
        let v = {
            let l = self.value(logits);
            assert_eq!(l.nrows(), y.len(), "one label per row required");
            assert!(y.iter().all(|&c| c < l.ncols()), "class index out of range");
            let total: f64 = l
                .rows()
                .into_iter()
                .zip(y.iter())
                .map(|(row, &c)| {
                    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = maxv + row.iter().map(|&v| (v - maxv).exp()).sum::<f64>().ln();
                    lse - row[c]
                })
                .sum();
            Array2::from_elem((1, 1), total / y.len() as f64)
        };
        self.push(Op::SoftmaxXent(logits, Arc::new(y)), v)
    }

    fn check_binary(&self, scores: NodeId, y: &[f64]) {
        let s = self.value(scores);
        assert_eq!(s.ncols(), 1, "binary loss expects a score column");
        assert_eq!(s.nrows(), y.len(), "one label per score required");
        assert!(y.iter().all(|&v| v == 1.0 || v == -1.0), "labels must be +-1");
    }

    // ---- execution ---------------------------------------------------------

    /// Re-evaluates every node in recording order from current constant and
    /// parameter values.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            let v: Option<Array2<f64>> = match &self.nodes[i].op {
                Op::Const | Op::Param => None,
                Op::MatMul(a, b) => Some(self.nodes[a.0].value.dot(&self.nodes[b.0].value)),
                Op::Add(a, b) => Some(&self.nodes[a.0].value + &self.nodes[b.0].value),
                Op::AddBias(a, b) => Some(&self.nodes[a.0].value + &self.nodes[b.0].value.row(0)),
                Op::Scale(a, c) => Some(&self.nodes[a.0].value * *c),
                Op::ScaleRows(a, w) => {
                    let mut v = self.nodes[a.0].value.clone();
                    for (mut row, &f) in v.rows_mut().into_iter().zip(w.iter()) {
                        row *= f;
                    }
                    Some(v)
                }
                Op::HadamardConst(a, m) => Some(&self.nodes[a.0].value * &**m),
                Op::Relu(a) => Some(self.nodes[a.0].value.mapv(|x| x.max(0.0))),
                Op::LeakyRelu(a, s) => {
                    Some(self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { s * x }))
                }
                Op::RowSum(a) => {
                    Some(self.nodes[a.0].value.sum_axis(Axis(0)).insert_axis(Axis(0)))
                }
                Op::SegmentSum(a, seg, k) => {
                    Some(segment_sum_values(&self.nodes[a.0].value, seg, *k))
                }
                Op::Gather(a, idx) => {
                    let src = &self.nodes[a.0].value;
                    let mut v = Array2::zeros((idx.len(), src.ncols()));
                    for (k, &i) in idx.iter().enumerate() {
                        v.row_mut(k).assign(&src.row(i));
                    }
                    Some(v)
                }
                Op::ScatterAdd(a, idx, rows) => {
                    let src = &self.nodes[a.0].value;
                    let mut v = Array2::zeros((*rows, src.ncols()));
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = v.row_mut(i);
                        row += &src.row(k);
                    }
                    Some(v)
                }
                Op::SegmentSoftmax(a, seg) => {
                    Some(segment_softmax_values(&self.nodes[a.0].value, seg))
                }
                Op::RowwiseMul(a, s) => {
                    let (va, vs) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
                    let mut v = va.clone();
                    for (mut row, f) in v.rows_mut().into_iter().zip(vs.column(0).iter()) {
                        row *= *f;
                    }
                    Some(v)
                }
                Op::RowwiseDot(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut v = Array2::zeros((va.nrows(), 1));
                    for (k, (ra, rb)) in va.rows().into_iter().zip(vb.rows()).enumerate() {
                        v[[k, 0]] = ra.dot(&rb);
                    }
                    Some(v)
                }
                Op::ConcatRows(a, b) => Some(ndarray::concatenate![
                    Axis(0),
                    self.nodes[a.0].value.view(),
                    self.nodes[b.0].value.view()
                ]),
                Op::LogisticLoss(a, y) => {
                    let s = &self.nodes[a.0].value;
                    let total: f64 = s
                        .column(0)
                        .iter()
                        .zip(y.iter())
                        .map(|(&si, &yi)| {
                            let z = -yi * si;
                            z.max(0.0) + (-z.abs()).exp().ln_1p()
                        })
                        .sum();
                    Some(Array2::from_elem((1, 1), total / y.len() as f64))
                }
                Op::ExpLoss(a, y) => {
                    let s = &self.nodes[a.0].value;
                    let total: f64 =
                        s.column(0).iter().zip(y.iter()).map(|(&si, &yi)| (-yi * si).exp()).sum();
                    Some(Array2::from_elem((1, 1), total / y.len() as f64))
                }
                Op::SoftmaxXent(a, y) => {
                    let l = &self.nodes[a.0].value;
                    let total: f64 = l
                        .rows()
                        .into_iter()
                        .zip(y.iter())
                        .map(|(row, &c)| {
                            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let lse =
                                maxv + row.iter().map(|&v| (v - maxv).exp()).sum::<f64>().ln();
                            lse - row[c]
                        })
                        .sum();
                    Some(Array2::from_elem((1, 1), total / y.len() as f64))
                }
            };
            if let Some(v) = v {
                self.nodes[i].value = v;
            }
        }
    }

    /// All (leaky) ReLU input values in tape order; the gradient-check kink
    /// filter compares these across perturbed evaluations.
    pub fn relu_preacts(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::LeakyRelu(a, _) = node.op {
                out.extend(self.nodes[a.0].value.iter().copied());
            }
        }
        out
    }

    /// Exact reverse-mode gradients of the scalar `loss` node for every
    /// registered parameter, with a deterministic accumulation order.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AdError> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(AdError::NonScalarLoss(lv.nrows(), lv.ncols()));
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(up) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param => {
                    adj[i] = Some(up);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = up.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&up);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, up.clone());
                    accumulate(&mut adj, *b, up);
                }
                Op::AddBias(a, b) => {
                    let gb = up.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *a, up);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, &up * *c),
                Op::ScaleRows(a, w) => {
                    let mut g = up;
                    for (mut row, &f) in g.rows_mut().into_iter().zip(w.iter()) {
                        row *= f;
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::HadamardConst(a, m) => accumulate(&mut adj, *a, &up * &**m),
                Op::Relu(a) => {
                    let mut g = up;
                    g.zip_mut_with(&self.nodes[a.0].value, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    accumulate(&mut adj, *a, g);
                }
                Op::LeakyRelu(a, s) => {
                    let s = *s;
                    let mut g = up;
                    g.zip_mut_with(&self.nodes[a.0].value, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi *= s;
                        }
                    });
                    accumulate(&mut adj, *a, g);
                }
                Op::RowSum(a) => {
                    let rows = self.nodes[a.0].value.nrows();
                    let mut g = Array2::zeros((rows, up.ncols()));
                    for mut row in g.rows_mut() {
                        row.assign(&up.row(0));
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::SegmentSum(a, seg, _) => {
                    let mut g = Array2::zeros(self.nodes[a.0].value.dim());
                    for (k, &s) in seg.iter().enumerate() {
                        g.row_mut(k).assign(&up.row(s));
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::Gather(a, idx) => {
                    let mut g = Array2::zeros(self.nodes[a.0].value.dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = g.row_mut(i);
                        row += &up.row(k);
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::ScatterAdd(a, idx, _) => {
                    let mut g = Array2::zeros(self.nodes[a.0].value.dim());
                    for (k, &i) in idx.iter().enumerate() {
                        g.row_mut(k).assign(&up.row(i));
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::SegmentSoftmax(a, seg) => {
                    // d l_e = alpha_e (g_e - sum_{e' in seg} alpha_e' g_e')
                    let alpha = &self.nodes[i].value;
                    let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dots = vec![0.0; segments];
                    for (e, &s) in seg.iter().enumerate() {
                        dots[s] += alpha[[e, 0]] * up[[e, 0]];
                    }
                    let mut g = Array2::zeros(self.nodes[a.0].value.dim());
                    for (e, &s) in seg.iter().enumerate() {
                        g[[e, 0]] = alpha[[e, 0]] * (up[[e, 0]] - dots[s]);
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::RowwiseMul(a, s) => {
                    let (va, vs) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
                    let mut ga = up.clone();
                    for (mut row, f) in ga.rows_mut().into_iter().zip(vs.column(0).iter()) {
                        row *= *f;
                    }
                    let mut gs = Array2::zeros(vs.dim());
                    for (k, (ru, ra)) in up.rows().into_iter().zip(va.rows()).enumerate() {
                        gs[[k, 0]] = ru.dot(&ra);
                    }
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *s, gs);
                }
                Op::RowwiseDot(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut ga = vb.clone();
                    let mut gb = va.clone();
                    for ((mut row, c), _) in
                        ga.rows_mut().into_iter().zip(up.column(0).iter()).zip(0..)
                    {
                        row *= *c;
                    }
                    for (mut row, c) in gb.rows_mut().into_iter().zip(up.column(0).iter()) {
                        row *= *c;
                    }
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::ConcatRows(a, b) => {
                    let na = self.nodes[a.0].value.nrows();
                    let ga = up.slice(ndarray::s![..na, ..]).to_owned();
                    let gb = up.slice(ndarray::s![na.., ..]).to_owned();
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::LogisticLoss(a, y) => {
                    let scale = up[[0, 0]] / y.len() as f64;
                    let s = &self.nodes[a.0].value;
                    let mut g = Array2::zeros(s.dim());
                    for (k, (&si, &yi)) in s.column(0).iter().zip(y.iter()).enumerate() {
                        // d/ds ln(1 + e^{-ys}) = -y * sigmoid(-ys)
                        let sig = 1.0 / (1.0 + (yi * si).exp());
                        g[[k, 0]] = scale * (-yi * sig);
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::ExpLoss(a, y) => {
                    let scale = up[[0, 0]] / y.len() as f64;
                    let s = &self.nodes[a.0].value;
                    let mut g = Array2::zeros(s.dim());
                    for (k, (&si, &yi)) in s.column(0).iter().zip(y.iter()).enumerate() {
                        g[[k, 0]] = scale * (-yi * (-yi * si).exp());
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::SoftmaxXent(a, y) => {
                    let scale = up[[0, 0]] / y.len() as f64;
                    let l = &self.nodes[a.0].value;
                    let mut g = Array2::zeros(l.dim());
                    for (k, (row, &c)) in l.rows().into_iter().zip(y.iter()).enumerate() {
                        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|&v| (v - maxv).exp()).sum();
                        for (j, &v) in row.iter().enumerate() {
                            let p = (v - maxv).exp() / z;
                            g[[k, j]] = scale * (p - if j == c { 1.0 } else { 0.0 });
                        }
                    }
                    accumulate(&mut adj, *a, g);
                }
            }
        }

        self.grads = self
            .params
            .iter()
            .map(|(_, node)| {
                adj[node.0].take().unwrap_or_else(|| Array2::zeros(self.nodes[node.0].value.dim()))
            })
            .collect();
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut adj[id.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

fn segment_sum_values(a: &Array2<f64>, seg: &[usize], segments: usize) -> Array2<f64> {
    let mut v = Array2::zeros((segments, a.ncols()));
    for (k, &s) in seg.iter().enumerate() {
        let mut row = v.row_mut(s);
        row += &a.row(k);
    }
    v
}

fn segment_softmax_values(logits: &Array2<f64>, seg: &[usize]) -> Array2<f64> {
    let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
    let mut maxv = vec![f64::NEG_INFINITY; segments];
    for (e, &s) in seg.iter().enumerate() {
        maxv[s] = maxv[s].max(logits[[e, 0]]);
    }
    let mut denom = vec![0.0; segments];
    let mut v = Array2::zeros(logits.dim());
    for (e, &s) in seg.iter().enumerate() {
        let x = (logits[[e, 0]] - maxv[s]).exp();
        v[[e, 0]] = x;
        denom[s] += x;
    }
    for (e, &s) in seg.iter().enumerate() {
        v[[e, 0]] /= denom[s];
    }
    v
}

/// Result of a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub pass: bool,
}

/// Compares analytic gradients against central differences on a random
/// coordinate sample.
///
/// `eval` maps parameter values to `(loss, relu pre-activations)`. A
/// coordinate is skipped when a pre-activation that responds to its
/// perturbation sits within `10 * eps` of a ReLU kink at either perturbed
/// point: the two-sided difference straddles the subgradient there.
/// Pre-activations the coordinate does not touch are constant along the
/// perturbation segment and never disqualify it.
pub fn grad_check<F>(
    eval: F,
    params: &[Array2<f64>],
    analytic: &[Array2<f64>],
    eps: f64,
    tol: f64,
    max_coords: usize,
    rng: &mut ChaCha12Rng,
) -> Result<GradCheckReport, AdError>
where
    F: Fn(&[Array2<f64>]) -> (f64, Vec<f64>),
{
    assert_eq!(params.len(), analytic.len());
    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, a)| (0..a.len()).map(move |k| (p, k)))
        .collect();
    coords.shuffle(rng);
    coords.truncate(max_coords);

    let mut report =
        GradCheckReport { max_rel_err: 0.0, checked: 0, skipped_kinks: 0, pass: true };
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for (p, k) in coords {
        let orig = work[p].as_slice().unwrap()[k];
        work[p].as_slice_mut().unwrap()[k] = orig + eps;
        let (fp, pre_p) = eval(&work);
        work[p].as_slice_mut().unwrap()[k] = orig - eps;
        let (fm, pre_m) = eval(&work);
        work[p].as_slice_mut().unwrap()[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(AdError::NonFinite);
        }
        let near_kink = pre_p
            .iter()
            .zip(&pre_m)
            .any(|(&a, &b)| a != b && a.abs().min(b.abs()) < 10.0 * eps);
        if near_kink {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[p].as_slice().unwrap()[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}
