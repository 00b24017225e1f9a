//! Canonical graph representation and the pooled feature aggregates every
//! analysis in the crate consumes.
//!
//! Graphs are simple and undirected: no self-loops, no multi-edges. Edges are
//! stored in canonical order (`i < j`, lexicographically sorted) so that
//! serialization and hashing are deterministic.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node count must be at least 1")]
    EmptyGraph,
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("edge ({0}, {1}) appears more than once")]
    DuplicateEdge(usize, usize),
    #[error("feature matrix has {rows} rows for {n} nodes")]
    FeatureRowMismatch { rows: usize, n: usize },
    #[error("feature dimension must be at least 1")]
    ZeroFeatureDim,
    #[error("edge feature map must cover every edge exactly once ({have} values for {edges} edges)")]
    EdgeFeatureMismatch { have: usize, edges: usize },
    #[error("r_prime {r_prime} exceeds n-1 = {max}")]
    RPrimeOutOfRange { r_prime: usize, max: usize },
    #[error("graph has {have} nodes, expected {want}")]
    NodeCountMismatch { have: usize, want: usize },
    #[error("malformed graph record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Node count plus canonical undirected edge set, with no features attached.
///
/// Generators produce topologies; a [`Graph`] is a topology plus a feature
/// matrix. Values are immutable after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Validates and canonicalizes an edge list: orients each edge as
    /// `(min, max)`, sorts lexicographically, rejects self-loops, duplicates
    /// and out-of-range endpoints.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut canon: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a, b));
            }
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange(a, b, n));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(Topology { n, edges: canon })
    }

    pub fn empty(n: usize) -> Result<Self, GraphError> {
        Self::new(n, std::iter::empty())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical `(i, j)` edge list with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let e = (a.min(b), a.max(b));
        self.edges.binary_search(&e).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Neighbor lists, each sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for nb in &mut adj {
            nb.sort_unstable();
        }
        adj
    }
}

/// A full graph example: topology, `n x d` node features, and optionally one
/// real scalar per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    topo: Topology,
    features: Array2<f64>,
    edge_feature: Option<Vec<f64>>,
}

impl Graph {
    pub fn new(topo: Topology, features: Array2<f64>) -> Result<Self, GraphError> {
        if features.nrows() != topo.n() {
            return Err(GraphError::FeatureRowMismatch { rows: features.nrows(), n: topo.n() });
        }
        if features.ncols() == 0 {
            return Err(GraphError::ZeroFeatureDim);
        }
        Ok(Graph { topo, features, edge_feature: None })
    }

    /// Attaches one scalar per canonical edge, in edge order.
    pub fn with_edge_features(mut self, ef: Vec<f64>) -> Result<Self, GraphError> {
        if ef.len() != self.topo.num_edges() {
            return Err(GraphError::EdgeFeatureMismatch { have: ef.len(), edges: self.topo.num_edges() });
        }
        self.edge_feature = Some(ef);
        Ok(self)
    }

    /// Same features, different topology. Used to rewire datasets that differ
    /// only in their graph-structure.
    pub fn rewired(&self, topo: Topology) -> Result<Self, GraphError> {
        if topo.n() != self.n() {
            return Err(GraphError::NodeCountMismatch { have: topo.n(), want: self.n() });
        }
        Graph::new(topo, self.features.clone())
    }

    pub fn n(&self) -> usize {
        self.topo.n()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.topo.edges()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn edge_feature(&self) -> Option<&[f64]> {
        self.edge_feature.as_deref()
    }

    /// Feature of the canonical edge `(min, max)`, if edge features are set.
    pub fn edge_feature_of(&self, a: usize, b: usize) -> Option<f64> {
        let ef = self.edge_feature.as_ref()?;
        let e = (a.min(b), a.max(b));
        self.topo.edges.binary_search(&e).ok().map(|k| ef[k])
    }
}

/// A graph with its class label: -1/+1 for binary tasks, `0..C-1` for
/// multiclass.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub label: i64,
}

/// Degree sequence summary. `std` is the population standard deviation and
/// `cov = std / mean`, defined as 0 when the mean degree is 0 (empty graph)
/// to avoid 0/0.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeStats {
    pub degrees: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub cov: f64,
}

/// Degree sequence, mean, population std, and coefficient of variation.
pub fn degree_stats(topo: &Topology) -> DegreeStats {
    let degrees = topo.degrees();
    let (mean, std, cov) = degree_moments(&degrees);
    DegreeStats { degrees, mean, std, cov }
}

/// (mean, population std, cov) of a degree sequence; the single arithmetic
/// path every COV in the crate goes through. Moments accumulate in exact
/// integer arithmetic (`n^2 var = n sum(d^2) - (sum d)^2`), so the result is
/// bit-identical under any node relabeling.
pub fn degree_moments(degrees: &[usize]) -> (f64, f64, f64) {
    let n = degrees.len() as u128;
    let s: u128 = degrees.iter().map(|&d| d as u128).sum();
    let ss: u128 = degrees.iter().map(|&d| (d as u128) * (d as u128)).sum();
    let mean = s as f64 / n as f64;
    let var = (n * ss - s * s) as f64 / (n * n) as f64;
    let std = var.sqrt();
    let cov = if s == 0 { 0.0 } else { std / mean };
    (mean, std, cov)
}

/// Sum of node feature vectors over all nodes.
pub fn pooled_sum(g: &Graph) -> Array1<f64> {
    g.features().sum_axis(ndarray::Axis(0))
}

/// `sum_i deg(i) * x_i`; by edge symmetry this equals the double sum of each
/// node's neighbors' features.
pub fn degree_weighted_sum(g: &Graph) -> Array1<f64> {
    let deg = g.topology().degrees();
    let mut out = Array1::zeros(g.dim());
    for (i, row) in g.features().rows().into_iter().enumerate() {
        out.scaled_add(deg[i] as f64, &row);
    }
    out
}

/// `sum_i (deg(i) - r') * x_i`, the delta-component input of the
/// extrapolation condition.
pub fn delta_sum(g: &Graph, r_prime: usize) -> Result<Array1<f64>, GraphError> {
    if r_prime > g.n() - 1 {
        return Err(GraphError::RPrimeOutOfRange { r_prime, max: g.n() - 1 });
    }
    let mut out = degree_weighted_sum(g);
    out.scaled_add(-(r_prime as f64), &pooled_sum(g));
    Ok(out)
}

/// One JSON object per line: `{"n":…, "edges":[[i,j],…], "x":[[…],…],
/// "ef":[[i,j,f],…]?, "y":…?}` with edges in canonical order.
#[derive(Debug, Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ef: Option<Vec<(usize, usize, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<i64>,
}

fn to_record(g: &Graph, label: Option<i64>) -> GraphRecord {
    GraphRecord {
        n: g.n(),
        edges: g.edges().to_vec(),
        x: g.features().rows().into_iter().map(|r| r.to_vec()).collect(),
        ef: g
            .edge_feature()
            .map(|ef| g.edges().iter().zip(ef).map(|(&(i, j), &f)| (i, j, f)).collect()),
        y: label,
    }
}

fn from_record(rec: GraphRecord) -> Result<(Graph, Option<i64>), GraphError> {
    let topo = Topology::new(rec.n, rec.edges)?;
    let d = rec.x.first().map(|r| r.len()).unwrap_or(0);
    if rec.x.len() != rec.n || rec.x.iter().any(|r| r.len() != d) {
        return Err(GraphError::Record("ragged or missing feature rows".into()));
    }
    let flat: Vec<f64> = rec.x.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((rec.n, d), flat)
        .map_err(|e| GraphError::Record(e.to_string()))?;
    let mut g = Graph::new(topo, features)?;
    if let Some(ef) = rec.ef {
        let map: BTreeMap<(usize, usize), f64> =
            ef.into_iter().map(|(i, j, f)| ((i.min(j), i.max(j)), f)).collect();
        if map.len() != g.topology().num_edges() {
            return Err(GraphError::EdgeFeatureMismatch {
                have: map.len(),
                edges: g.topology().num_edges(),
            });
        }
        let vals: Result<Vec<f64>, GraphError> = g
            .edges()
            .iter()
            .map(|e| map.get(e).copied().ok_or(GraphError::Record(format!("ef misses edge {e:?}"))))
            .collect();
        g = g.with_edge_features(vals?)?;
    }
    Ok((g, rec.y))
}

/// Writes graphs in the canonical JSON-lines format.
pub fn write_jsonl<W: Write>(mut w: W, graphs: &[(Graph, Option<i64>)]) -> Result<(), GraphError> {
    for (g, y) in graphs {
        let rec = to_record(g, *y);
        serde_json::to_writer(&mut w, &rec).map_err(|e| GraphError::Record(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads graphs from the canonical JSON-lines format.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<(Graph, Option<i64>)>, GraphError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord =
            serde_json::from_str(&line).map_err(|e| GraphError::Record(e.to_string()))?;
        out.push(from_record(rec)?);
    }
    Ok(out)
}

pub fn write_jsonl_labeled<W: Write>(w: W, graphs: &[LabeledGraph]) -> Result<(), GraphError> {
    let pairs: Vec<(Graph, Option<i64>)> =
        graphs.iter().map(|lg| (lg.graph.clone(), Some(lg.label))).collect();
    write_jsonl(w, &pairs)
}

pub fn read_jsonl_labeled<R: BufRead>(r: R) -> Result<Vec<LabeledGraph>, GraphError> {
    read_jsonl(r)?
        .into_iter()
        .map(|(graph, y)| {
            y.map(|label| LabeledGraph { graph, label })
                .ok_or_else(|| GraphError::Record("record is missing a label".into()))
        })
        .collect()
}
