//! The five message-passing architectures with sum pooling, optional readout,
//! and optional edge-feature processing, plus the 1-layer linear GNN used by
//! the implicit-bias analysis.
//!
//! Per-layer update rules, with `sigma = ReLU` and `e_ij` the scalar edge
//! feature (self-edges use `e_ii = 0`):
//!
//! - `graphconv`:      `x' = W1 x_i + W2 sum_j x_j + sum_j sigma(W3 e_ij)`
//! - `graphconv_mean`: same with the neighbor aggregate divided by `deg(i)`
//!   (0 for isolated nodes)
//! - `gin`:            `x' = W4((1+eps) x_i + W2 sum_j sigma(x_i + sigma(W3 e_ij)))`;
//!   the inner `x_i` is reproduced as published, a corrected `x_j` variant
//!   sits behind [`GnnConfig::gin_neighbor_fix`]. Without edge features this
//!   reduces to `x' = W4((1+eps) x_i + sum_j x_j)`.
//! - `gatv2`:          `x' = a_ii W1 x_i + sum_j a_ij W2 x_j`, single-head
//!   attention `a_ij = softmax_{k in N(i) u {i}} a^T LeakyReLU(W1 x_i + W2 x_k + sigma(W3 e_ik))`
//! - `transformer`:    `x' = W1 x_i + sum_j a_ij (W2 x_j + sigma(W5 e_ij))` with
//!   `a_ij = softmax_{j in N(i)} (W3 x_i)^T (W4 x_j + W5 e_ij) / sqrt(d)`
//!
//! ReLU follows every message-passing layer (identity activation is available
//! for the linear-consistency checks), node states are sum-pooled per graph,
//! and a single affine readout produces the logits.

use crate::autodiff::{NodeId, ParamId, Tape};
use crate::graph::Graph;
use crate::rng::{stream_rng, Stream};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {got} does not match configured input dimension {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("config requires edge features but a graph has none")]
    MissingEdgeFeatures,
    #[error("disabling the readout requires hidden width 1, got {0}")]
    ScalarWidthRequired(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    GraphConv,
    Gin,
    Gatv2,
    Transformer,
    GraphConvMean,
}

impl Arch {
    pub const ALL: [Arch; 5] =
        [Arch::GraphConv, Arch::Gin, Arch::Gatv2, Arch::Transformer, Arch::GraphConvMean];

    pub fn name(&self) -> &'static str {
        match self {
            Arch::GraphConv => "graphconv",
            Arch::Gin => "gin",
            Arch::Gatv2 => "gatv2",
            Arch::Transformer => "transformer",
            Arch::GraphConvMean => "graphconv_mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Slope of the LeakyReLU inside GATv2 attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub arch: Arch,
    pub in_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub out_classes: usize,
    pub dropout: f64,
    pub use_bias: bool,
    pub edge_features: bool,
    /// Single affine map after sum pooling; disabled only for the scalar
    /// linear-consistency configuration.
    pub readout: bool,
    pub activation: Activation,
    /// Replace the published inner `x_i` of the GIN edge formula with `x_j`.
    pub gin_neighbor_fix: bool,
}

impl GnnConfig {
    pub fn new(arch: Arch, in_dim: usize, layers: usize, out_classes: usize) -> Self {
        GnnConfig {
            arch,
            in_dim,
            layers,
            hidden: 64,
            out_classes,
            dropout: 0.0,
            use_bias: true,
            edge_features: false,
            readout: true,
            activation: Activation::Relu,
            gin_neighbor_fix: false,
        }
    }
}

/// Per-layer weights; which fields exist depends on the architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    Conv {
        w1: Array2<f64>,
        w2: Array2<f64>,
        edge_proj: Option<Array2<f64>>,
        bias: Option<Array2<f64>>,
    },
    Gin {
        w4: Array2<f64>,
        /// Square neighbor transform; present only with edge features.
        w2: Option<Array2<f64>>,
        edge_proj: Option<Array2<f64>>,
        /// Fixed, not trained; initialized to 0.
        eps: f64,
        bias: Option<Array2<f64>>,
    },
    Gatv2 {
        w1: Array2<f64>,
        w2: Array2<f64>,
        att: Array2<f64>,
        edge_proj: Option<Array2<f64>>,
        bias: Option<Array2<f64>>,
    },
    Transformer {
        w1: Array2<f64>,
        w2: Array2<f64>,
        wq: Array2<f64>,
        wk: Array2<f64>,
        edge_proj: Option<Array2<f64>>,
        bias: Option<Array2<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams {
    pub w: Array2<f64>,
    pub bias: Option<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub readout: Option<ReadoutParams>,
}

fn fan_in_init(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 * bound - bound)
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, eps = 0;
/// deterministic per seed.
pub fn init(cfg: &GnnConfig, seed: u64) -> ModelParams {
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let mut layers = Vec::with_capacity(cfg.layers);
    for k in 0..cfg.layers {
        let din = if k == 0 { cfg.in_dim } else { cfg.hidden };
        let h = cfg.hidden;
        let bias = cfg.use_bias.then(|| Array2::zeros((1, h)));
        let layer = match cfg.arch {
            Arch::GraphConv | Arch::GraphConvMean => LayerParams::Conv {
                w1: fan_in_init(&mut rng, din, h),
                w2: fan_in_init(&mut rng, din, h),
                edge_proj: cfg.edge_features.then(|| fan_in_init(&mut rng, 1, h)),
                bias,
            },
            Arch::Gin => LayerParams::Gin {
                w4: fan_in_init(&mut rng, din, h),
                w2: cfg.edge_features.then(|| fan_in_init(&mut rng, din, din)),
                edge_proj: cfg.edge_features.then(|| fan_in_init(&mut rng, 1, din)),
                eps: 0.0,
                bias,
            },
            Arch::Gatv2 => LayerParams::Gatv2 {
                w1: fan_in_init(&mut rng, din, h),
                w2: fan_in_init(&mut rng, din, h),
                att: fan_in_init(&mut rng, h, 1),
                edge_proj: cfg.edge_features.then(|| fan_in_init(&mut rng, 1, h)),
                bias,
            },
            Arch::Transformer => LayerParams::Transformer {
                w1: fan_in_init(&mut rng, din, h),
                w2: fan_in_init(&mut rng, din, h),
                wq: fan_in_init(&mut rng, din, h),
                wk: fan_in_init(&mut rng, din, h),
                edge_proj: cfg.edge_features.then(|| fan_in_init(&mut rng, 1, h)),
                bias,
            },
        };
        layers.push(layer);
    }
    let readout = cfg.readout.then(|| ReadoutParams {
        w: fan_in_init(&mut rng, cfg.hidden, cfg.out_classes),
        bias: cfg.use_bias.then(|| Array2::zeros((1, cfg.out_classes))),
    });
    ModelParams { layers, readout }
}

macro_rules! visit_tensors {
    ($self:expr, $out:ident, $borrow:tt) => {
        for (k, layer) in $self.layers.$borrow().enumerate() {
            match layer {
                LayerParams::Conv { w1, w2, edge_proj, bias } => {
                    $out.push((format!("layer{k}.w1"), w1));
                    $out.push((format!("layer{k}.w2"), w2));
                    if let Some(e) = edge_proj {
                        $out.push((format!("layer{k}.edge_proj"), e));
                    }
                    if let Some(b) = bias {
                        $out.push((format!("layer{k}.bias"), b));
                    }
                }
                LayerParams::Gin { w4, w2, edge_proj, bias, .. } => {
                    $out.push((format!("layer{k}.w4"), w4));
                    if let Some(w2) = w2 {
                        $out.push((format!("layer{k}.w2"), w2));
                    }
                    if let Some(e) = edge_proj {
                        $out.push((format!("layer{k}.edge_proj"), e));
                    }
                    if let Some(b) = bias {
                        $out.push((format!("layer{k}.bias"), b));
                    }
                }
                LayerParams::Gatv2 { w1, w2, att, edge_proj, bias } => {
                    $out.push((format!("layer{k}.w1"), w1));
                    $out.push((format!("layer{k}.w2"), w2));
                    $out.push((format!("layer{k}.att"), att));
                    if let Some(e) = edge_proj {
                        $out.push((format!("layer{k}.edge_proj"), e));
                    }
                    if let Some(b) = bias {
                        $out.push((format!("layer{k}.bias"), b));
                    }
                }
                LayerParams::Transformer { w1, w2, wq, wk, edge_proj, bias } => {
                    $out.push((format!("layer{k}.w1"), w1));
                    $out.push((format!("layer{k}.w2"), w2));
                    $out.push((format!("layer{k}.wq"), wq));
                    $out.push((format!("layer{k}.wk"), wk));
                    if let Some(e) = edge_proj {
                        $out.push((format!("layer{k}.edge_proj"), e));
                    }
                    if let Some(b) = bias {
                        $out.push((format!("layer{k}.bias"), b));
                    }
                }
            }
        }
    };
}

impl ModelParams {
    /// Trainable tensors in a canonical order; the tape, gradients, and
    /// optimizer state all index by this order. GIN's `eps` is fixed and
    /// therefore absent.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = Vec::new();
        visit_tensors!(self, out, iter);
        if let Some(ro) = &self.readout {
            out.push(("readout.w".to_string(), &ro.w));
            if let Some(b) = &ro.bias {
                out.push(("readout.bias".to_string(), b));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = Vec::new();
        visit_tensors!(self, out, iter_mut);
        if let Some(ro) = &mut self.readout {
            out.push(("readout.w".to_string(), &mut ro.w));
            if let Some(b) = &mut ro.bias {
                out.push(("readout.bias".to_string(), b));
            }
        }
        out
    }
}

/// Per-layer ratio of topological to root weight Frobenius norms, plus the
/// aggregate over all layers. A zero root norm reports `+inf`.
///
/// For GIN the root path is `(1+eps) I`, so the root norm is
/// `|1+eps| sqrt(d)`; without an explicit `W2` the neighbor path is the
/// identity with norm `sqrt(d)`.
pub fn norm_ratio(params: &ModelParams) -> (Vec<f64>, f64) {
    let fro = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut per_layer = Vec::with_capacity(params.layers.len());
    let (mut top_sq, mut root_sq) = (0.0, 0.0);
    for layer in &params.layers {
        let (top, root) = match layer {
            LayerParams::Conv { w1, w2, .. }
            | LayerParams::Gatv2 { w1, w2, .. }
            | LayerParams::Transformer { w1, w2, .. } => (fro(w2), fro(w1)),
            LayerParams::Gin { w4, w2, eps, .. } => {
                let d = (w4.nrows() as f64).sqrt();
                let top = w2.as_ref().map(&fro).unwrap_or(d);
                (top, (1.0 + eps).abs() * d)
            }
        };
        per_layer.push(if root > 0.0 { top / root } else { f64::INFINITY });
        top_sq += top * top;
        root_sq += root * root;
    }
    let aggregate = if root_sq > 0.0 { (top_sq / root_sq).sqrt() } else { f64::INFINITY };
    (per_layer, aggregate)
}

// ---- batched forward --------------------------------------------------------

/// Union-graph layout for a batch: graphs stacked into one block-diagonal
/// graph with per-node graph ids for pooling.
struct BatchLayout {
    x: Array2<f64>,
    node_seg: Vec<usize>,
    /// Directed edges: both orientations of every undirected edge.
    src: Vec<usize>,
    tgt: Vec<usize>,
    /// Scalar feature per directed edge, when edge features are in play.
    edge_vals: Option<Vec<f64>>,
    deg: Vec<usize>,
    graphs: usize,
}

fn assemble(cfg: &GnnConfig, graphs: &[&Graph]) -> Result<BatchLayout, ModelError> {
    let total: usize = graphs.iter().map(|g| g.n()).sum();
    let mut x = Array2::zeros((total, cfg.in_dim));
    let mut node_seg = Vec::with_capacity(total);
    let (mut src, mut tgt) = (Vec::new(), Vec::new());
    let mut edge_vals = cfg.edge_features.then(Vec::new);
    let mut deg = vec![0usize; total];
    let mut base = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.dim() != cfg.in_dim {
            return Err(ModelError::DimMismatch { want: cfg.in_dim, got: g.dim() });
        }
        x.slice_mut(ndarray::s![base..base + g.n(), ..]).assign(g.features());
        node_seg.extend(std::iter::repeat(gi).take(g.n()));
        let ef = if cfg.edge_features {
            Some(g.edge_feature().ok_or(ModelError::MissingEdgeFeatures)?)
        } else {
            None
        };
        for (k, &(i, j)) in g.edges().iter().enumerate() {
            src.push(base + i);
            tgt.push(base + j);
            src.push(base + j);
            tgt.push(base + i);
            deg[base + i] += 1;
            deg[base + j] += 1;
            if let (Some(vals), Some(ef)) = (edge_vals.as_mut(), ef) {
                vals.push(ef[k]);
                vals.push(ef[k]);
            }
        }
        base += g.n();
    }
    Ok(BatchLayout { x, node_seg, src, tgt, edge_vals, deg, graphs: graphs.len() })
}

/// Handle to a built forward pass: the logits node and one tape parameter per
/// [`ModelParams::tensors`] entry, in the same order.
pub struct BatchForward {
    pub logits: NodeId,
    pub param_ids: Vec<ParamId>,
}

/// Records the batched forward pass on `tape`. `dropout_rng` enables dropout
/// masks between layers (training mode); pass `None` to evaluate.
pub fn build_forward(
    tape: &mut Tape,
    cfg: &GnnConfig,
    params: &ModelParams,
    graphs: &[&Graph],
    mut dropout_rng: Option<&mut ChaCha12Rng>,
) -> Result<BatchForward, ModelError> {
    if !cfg.readout && cfg.hidden != 1 {
        return Err(ModelError::ScalarWidthRequired(cfg.hidden));
    }
    let layout = assemble(cfg, graphs)?;
    let n = layout.node_seg.len();

    let mut param_ids = Vec::new();
    let mut node_of: BTreeMap<String, NodeId> = BTreeMap::new();
    for (name, tensor) in params.tensors() {
        let pid = tape.param(&name, tensor.clone());
        node_of.insert(name, tape.param_node(pid));
        param_ids.push(pid);
    }

    // Per-directed-edge feature column, shared across layers.
    let ef_col = layout.edge_vals.as_ref().map(|vals| {
        tape.constant(Array2::from_shape_vec((vals.len(), 1), vals.clone()).unwrap())
    });
    let inv_deg: Vec<f64> =
        layout.deg.iter().map(|&d| if d > 0 { 1.0 / d as f64 } else { 0.0 }).collect();

    let mut h = tape.constant(layout.x.clone());
    for (k, layer) in params.layers.iter().enumerate() {
        let get = |name: &str| node_of[&format!("layer{k}.{name}")];
        let mut out = match layer {
            LayerParams::Conv { edge_proj, .. } => {
                let root = tape.matmul(h, get("w1"));
                let gathered = tape.gather(h, layout.src.clone());
                let mut agg = tape.scatter_add(gathered, layout.tgt.clone(), n);
                if cfg.arch == Arch::GraphConvMean {
                    agg = tape.scale_rows(agg, inv_deg.clone());
                }
                let neigh = tape.matmul(agg, get("w2"));
                let mut out = tape.add(root, neigh);
                if edge_proj.is_some() {
                    let e = tape.matmul(ef_col.expect("edge features checked"), get("edge_proj"));
                    let e = tape.relu(e);
                    let mut esum = tape.scatter_add(e, layout.tgt.clone(), n);
                    if cfg.arch == Arch::GraphConvMean {
                        esum = tape.scale_rows(esum, inv_deg.clone());
                    }
                    out = tape.add(out, esum);
                }
                out
            }
            LayerParams::Gin { w2, eps, edge_proj, .. } => {
                let agg = if edge_proj.is_some() {
                    let inner_src = if cfg.gin_neighbor_fix { &layout.src } else { &layout.tgt };
                    let inner_x = tape.gather(h, inner_src.clone());
                    let e = tape.matmul(ef_col.expect("edge features checked"), get("edge_proj"));
                    let e = tape.relu(e);
                    let msg = tape.add(inner_x, e);
                    let msg = tape.relu(msg);
                    let summed = tape.scatter_add(msg, layout.tgt.clone(), n);
                    debug_assert!(w2.is_some());
                    tape.matmul(summed, get("w2"))
                } else {
                    let gathered = tape.gather(h, layout.src.clone());
                    tape.scatter_add(gathered, layout.tgt.clone(), n)
                };
                let root = tape.scale(h, 1.0 + eps);
                let pre = tape.add(root, agg);
                tape.matmul(pre, get("w4"))
            }
            LayerParams::Gatv2 { edge_proj, .. } => {
                let h1 = tape.matmul(h, get("w1"));
                let h2 = tape.matmul(h, get("w2"));
                // Softmax support is N(i) u {i}: self edges form a prefix so
                // the value rows can mix W1 (self) and W2 (neighbors).
                let self_idx: Vec<usize> = (0..n).collect();
                let all_tgt: Vec<usize> =
                    self_idx.iter().copied().chain(layout.tgt.iter().copied()).collect();
                let all_src: Vec<usize> =
                    self_idx.iter().copied().chain(layout.src.iter().copied()).collect();
                let q = tape.gather(h1, all_tgt.clone());
                let kx = tape.gather(h2, all_src);
                let mut msg = tape.add(q, kx);
                if edge_proj.is_some() {
                    // e_ii = 0 on self edges contributes sigma(0) = 0.
                    let mut vals = vec![0.0; n];
                    vals.extend(layout.edge_vals.as_ref().expect("edge features checked"));
                    let col =
                        tape.constant(Array2::from_shape_vec((vals.len(), 1), vals).unwrap());
                    let e = tape.matmul(col, get("edge_proj"));
                    let e = tape.relu(e);
                    msg = tape.add(msg, e);
                }
                let act = tape.leaky_relu(msg, LEAKY_SLOPE);
                let logits = tape.matmul(act, get("att"));
                let alpha = tape.segment_softmax(logits, all_tgt.clone());
                let self_vals = tape.gather(h1, self_idx);
                let neigh_vals = tape.gather(h2, layout.src.clone());
                let values = tape.concat_rows(self_vals, neigh_vals);
                let weighted = tape.rowwise_mul(values, alpha);
                tape.scatter_add(weighted, all_tgt, n)
            }
            LayerParams::Transformer { edge_proj, .. } => {
                let h1 = tape.matmul(h, get("w1"));
                let h2 = tape.matmul(h, get("w2"));
                let q = tape.matmul(h, get("wq"));
                let kx = tape.matmul(h, get("wk"));
                let q_e = tape.gather(q, layout.tgt.clone());
                let mut k_e = tape.gather(kx, layout.src.clone());
                let mut v_e = tape.gather(h2, layout.src.clone());
                if edge_proj.is_some() {
                    let e_lin =
                        tape.matmul(ef_col.expect("edge features checked"), get("edge_proj"));
                    // W5 e_ij enters the key linearly and the value through sigma.
                    k_e = tape.add(k_e, e_lin);
                    let e_act = tape.relu(e_lin);
                    v_e = tape.add(v_e, e_act);
                }
                let dots = tape.rowwise_dot(q_e, k_e);
                let logits = tape.scale(dots, 1.0 / (cfg.hidden as f64).sqrt());
                let alpha = tape.segment_softmax(logits, layout.tgt.clone());
                let weighted = tape.rowwise_mul(v_e, alpha);
                let agg = tape.scatter_add(weighted, layout.tgt.clone(), n);
                tape.add(h1, agg)
            }
        };
        if let Some(bias) = node_of.get(&format!("layer{k}.bias")) {
            out = tape.add_bias(out, *bias);
        }
        if cfg.activation == Activation::Relu {
            out = tape.relu(out);
        }
        if k + 1 < params.layers.len() && cfg.dropout > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let keep = 1.0 - cfg.dropout;
                let mask = Array2::from_shape_fn(tape.value(out).dim(), |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out = tape.hadamard_const(out, mask);
            }
        }
        h = out;
    }

    let pooled = tape.segment_sum(h, layout.node_seg.clone(), layout.graphs);
    let logits = if params.readout.is_some() {
        let mut l = tape.matmul(pooled, node_of["readout.w"]);
        if let Some(b) = node_of.get("readout.bias") {
            l = tape.add_bias(l, *b);
        }
        l
    } else {
        pooled
    };
    Ok(BatchForward { logits, param_ids })
}

/// Logits for a single graph, evaluation mode.
pub fn forward(cfg: &GnnConfig, params: &ModelParams, g: &Graph) -> Result<Array1<f64>, ModelError> {
    let mut tape = Tape::new();
    let bf = build_forward(&mut tape, cfg, params, &[g], None)?;
    Ok(tape.value(bf.logits).row(0).to_owned())
}

// ---- linear GNN ---------------------------------------------------------------

/// The 1-layer, no-readout, no-bias linear GNN of the implicit-bias analysis:
/// `f(g) = w1 . pooled_sum(g) + w2 . degree_weighted_sum(g)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGnnParams {
    pub w1: Array1<f64>,
    pub w2: Array1<f64>,
}

impl LinearGnnParams {
    /// Small uniform init. Implicit-bias runs start near zero: on regular
    /// training data the component of `(w1, w2)` orthogonal to the data span
    /// is frozen under gradient descent and only shrinks relative to the
    /// growing margin direction, so the init scale bounds the reachable
    /// alignment residual at any finite horizon.
    pub fn init(d: usize, scale: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut draw = |_| rng.gen::<f64>() * 2.0 * scale - scale;
        LinearGnnParams {
            w1: Array1::from_iter((0..d).map(&mut draw)),
            w2: Array1::from_iter((0..d).map(&mut draw)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.len()
    }

    pub fn norm_ratio(&self) -> f64 {
        let n1 = self.w1.dot(&self.w1).sqrt();
        let n2 = self.w2.dot(&self.w2).sqrt();
        if n1 > 0.0 {
            n2 / n1
        } else {
            f64::INFINITY
        }
    }

    /// `max_j |w2_j - r w1_j| / ||w1||_inf`, the scale-free componentwise
    /// alignment residual.
    pub fn alignment_residual(&self, r: usize) -> f64 {
        alignment_residual(self.w1.view(), self.w2.view(), r)
    }
}

pub(crate) fn alignment_residual(
    w1: ndarray::ArrayView1<f64>,
    w2: ndarray::ArrayView1<f64>,
    r: usize,
) -> f64 {
    let num =
        w1.iter().zip(w2.iter()).map(|(&a, &b)| (b - r as f64 * a).abs()).fold(0.0f64, f64::max);
    let den = w1.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
    num / den
}

/// `w1 . pooled_sum + w2 . degree_weighted_sum`.
pub fn forward_linear(params: &LinearGnnParams, g: &Graph) -> Result<f64, ModelError> {
    if params.dim() != g.dim() {
        return Err(ModelError::DimMismatch { want: params.dim(), got: g.dim() });
    }
    Ok(params.w1.dot(&crate::graph::pooled_sum(g))
        + params.w2.dot(&crate::graph::degree_weighted_sum(g)))
}

// ---- checkpointing --------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WeightJson {
    shape: (usize, usize),
    data: Vec<f64>,
}

/// Self-describing parameter checkpoint: the config plus shape-tagged flat
/// arrays per named weight.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: GnnConfig,
    weights: BTreeMap<String, WeightJson>,
    gin_eps: Vec<f64>,
}

pub fn to_checkpoint(cfg: &GnnConfig, params: &ModelParams) -> Checkpoint {
    let weights = params
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, WeightJson { shape: t.dim(), data: t.iter().copied().collect() }))
        .collect();
    let gin_eps = params
        .layers
        .iter()
        .map(|l| if let LayerParams::Gin { eps, .. } = l { *eps } else { 0.0 })
        .collect();
    Checkpoint { config: cfg.clone(), weights, gin_eps }
}

pub fn from_checkpoint(ck: &Checkpoint) -> Result<(GnnConfig, ModelParams), ModelError> {
    let mut params = init(&ck.config, 0);
    for (k, layer) in params.layers.iter_mut().enumerate() {
        if let LayerParams::Gin { eps, .. } = layer {
            *eps = *ck.gin_eps.get(k).unwrap_or(&0.0);
        }
    }
    for (name, tensor) in params.tensors_mut() {
        let w = ck
            .weights
            .get(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing weight {name}")))?;
        if w.shape != tensor.dim() || w.data.len() != tensor.len() {
            return Err(ModelError::Checkpoint(format!("shape mismatch for {name}")));
        }
        *tensor = Array2::from_shape_vec(w.shape, w.data.clone())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    }
    Ok((ck.config.clone(), params))
}
