//! Random graph distributions, feature sampling, and the graph-less teacher
//! of the Sum task.
//!
//! All generators are deterministic functions of their parameters and the
//! supplied rng state; dataset construction splits the seed space per
//! instance index so instances can be generated independently.

use crate::graph::{Graph, LabeledGraph, Topology};
use crate::rng::{stream_rng, Stream};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("edge probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("regular degree r={r} invalid for n={n}: need r <= n-1 and n*r even")]
    BadRegular { n: usize, r: usize },
    #[error("attachment count m={m} must satisfy 1 <= m < n={n}")]
    BadAttachment { n: usize, m: usize },
    #[error("star graphs need at least 2 nodes, got {0}")]
    StarTooSmall(usize),
    #[error("teacher dimension {teacher} does not match feature dimension {graph}")]
    DimMismatch { teacher: usize, graph: usize },
    #[error("teacher weight vector must be nonzero")]
    ZeroTeacher,
    #[error("resampling budget exhausted while enforcing the margin on instance {0}")]
    ResampleBudget(usize),
}

/// Graph-structure distribution of a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphDist {
    /// Erdos-Renyi: each unordered pair is an edge independently with
    /// probability `p`.
    Gnp { p: f64 },
    /// Every node has degree `r`.
    Regular { r: usize },
    /// Preferential attachment, `m_attach` edges per arriving node.
    Ba { m_attach: usize },
    /// Node 0 adjacent to all others, no other edges.
    Star,
    /// No edges.
    Empty,
}

impl GraphDist {
    pub fn label(&self) -> String {
        match self {
            GraphDist::Gnp { p } => format!("gnp{p}"),
            GraphDist::Regular { r } => format!("regular{r}"),
            GraphDist::Ba { m_attach } => format!("ba{m_attach}"),
            GraphDist::Star => "star".to_string(),
            GraphDist::Empty => "empty".to_string(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha12Rng) -> Result<Topology, SynthError> {
        match *self {
            GraphDist::Gnp { p } => gen_gnp(n, p, rng),
            GraphDist::Regular { r } => gen_regular(n, r, rng),
            GraphDist::Ba { m_attach } => gen_ba(n, m_attach, rng),
            GraphDist::Star => gen_star(n),
            GraphDist::Empty => Topology::empty(n).map_err(|_| SynthError::StarTooSmall(0)),
        }
    }
}

/// Graph-less linear labeler over summed node features:
/// `y = sign(w_star . pooled_sum)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    w_star: Array1<f64>,
}

impl TeacherModel {
    pub fn new(w_star: Array1<f64>) -> Result<Self, SynthError> {
        if w_star.iter().map(|v| v * v).sum::<f64>() == 0.0 {
            return Err(SynthError::ZeroTeacher);
        }
        Ok(TeacherModel { w_star })
    }

    /// Standard-normal teacher drawn once per dataset on the teacher stream.
    pub fn sample(d: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Teacher, 0);
        loop {
            let w: Array1<f64> = Array1::from_iter((0..d).map(|_| rng.sample(StandardNormal)));
            if let Ok(t) = TeacherModel::new(w) {
                return t;
            }
        }
    }

    pub fn w_star(&self) -> &Array1<f64> {
        &self.w_star
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    /// Raw teacher score `w_star . pooled_sum(g)`.
    pub fn score(&self, g: &Graph) -> Result<f64, SynthError> {
        if self.dim() != g.dim() {
            return Err(SynthError::DimMismatch { teacher: self.dim(), graph: g.dim() });
        }
        Ok(self.w_star.dot(&crate::graph::pooled_sum(g)))
    }
}

/// Outcome of labeling one instance: a label, or a request to resample its
/// features because the teacher margin fell below `margin_eps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelOutcome {
    Label(i8),
    Resample,
}

/// `sign(w_star . pooled_sum)`, flagging instances whose absolute teacher
/// score is below `margin_eps`. Flagged instances get fresh features rather
/// than being dropped, which keeps the dataset linearly separable in
/// pooled-sum space by construction.
pub fn teacher_label(t: &TeacherModel, g: &Graph, margin_eps: f64) -> Result<LabelOutcome, SynthError> {
    let s = t.score(g)?;
    if s.abs() < margin_eps {
        return Ok(LabelOutcome::Resample);
    }
    Ok(LabelOutcome::Label(if s > 0.0 { 1 } else { -1 }))
}

/// Erdos-Renyi G(n, p).
pub fn gen_gnp(n: usize, p: f64, rng: &mut ChaCha12Rng) -> Result<Topology, SynthError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(SynthError::BadProbability(p));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(Topology::new(n, edges).expect("gnp edges are valid by construction"))
}

/// Node 0 adjacent to all others.
pub fn gen_star(n: usize) -> Result<Topology, SynthError> {
    if n < 2 {
        return Err(SynthError::StarTooSmall(n));
    }
    Ok(Topology::new(n, (1..n).map(|i| (0, i))).expect("star edges are valid"))
}

/// Simple r-regular graph.
///
/// Uses the configuration model (pair r stubs per node uniformly) with
/// full-restart rejection of self-loops and multi-edges, budgeted at `10 n`
/// attempts. Dense degrees make rejection sampling hopeless, so on a spent
/// budget the generator falls back to a circulant r-regular graph under a
/// random node relabeling, which is still a deterministic function of the
/// rng state. `r = 0` and `r = n-1` short-circuit to the empty and complete
/// graph.
pub fn gen_regular(n: usize, r: usize, rng: &mut ChaCha12Rng) -> Result<Topology, SynthError> {
    if r >= n || (n * r) % 2 != 0 {
        return Err(SynthError::BadRegular { n, r });
    }
    if r == 0 {
        return Ok(Topology::empty(n).expect("n >= 1"));
    }
    if r == n - 1 {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        return Ok(Topology::new(n, edges).expect("complete graph is valid"));
    }
    'attempt: for _ in 0..(10 * n) {
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(r)).collect();
        stubs.shuffle(rng);
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * r / 2);
        for pair in stubs.chunks(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b {
                continue 'attempt;
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            continue 'attempt;
        }
        return Ok(Topology::new(n, edges).expect("checked simple"));
    }
    Ok(circulant_regular(n, r, rng))
}

/// Circulant r-regular graph: node i connects to i +- 1..=r/2 (mod n), plus
/// the antipodal node when r is odd (n is even then, since n*r is even).
/// A random relabeling restores sample diversity at the edge-set level.
fn circulant_regular(n: usize, r: usize, rng: &mut ChaCha12Rng) -> Topology {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges = Vec::with_capacity(n * r / 2);
    for i in 0..n {
        for k in 1..=(r / 2) {
            edges.push((perm[i], perm[(i + k) % n]));
        }
    }
    if r % 2 == 1 {
        for i in 0..n / 2 {
            edges.push((perm[i], perm[i + n / 2]));
        }
    }
    Topology::new(n, edges).expect("circulant is simple and r-regular")
}

/// Preferential attachment. Starts from a complete seed graph on
/// `m_attach + 1` nodes; each arriving node draws `m_attach` distinct targets
/// by repeated degree-proportional sampling without replacement.
pub fn gen_ba(n: usize, m_attach: usize, rng: &mut ChaCha12Rng) -> Result<Topology, SynthError> {
    if m_attach == 0 || m_attach >= n {
        return Err(SynthError::BadAttachment { n, m: m_attach });
    }
    let seed = m_attach + 1;
    let mut edges: Vec<(usize, usize)> =
        (0..seed).flat_map(|i| ((i + 1)..seed).map(move |j| (i, j))).collect();
    let mut deg = vec![m_attach; seed];
    deg.resize(n, 0);
    for v in seed..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(m_attach);
        while chosen.len() < m_attach {
            let total: usize = deg[..v]
                .iter()
                .enumerate()
                .filter(|(u, _)| !chosen.contains(u))
                .map(|(_, &d)| d)
                .sum();
            let mut ticket = rng.gen_range(0..total);
            for (u, &d) in deg[..v].iter().enumerate() {
                if chosen.contains(&u) {
                    continue;
                }
                if ticket < d {
                    chosen.push(u);
                    break;
                }
                ticket -= d;
            }
        }
        for &u in &chosen {
            edges.push((u, v));
            deg[u] += 1;
        }
        deg[v] = m_attach;
    }
    Ok(Topology::new(n, edges).expect("ba edges are simple by construction"))
}

/// `n x d` i.i.d. standard normal feature matrix.
pub fn sample_features(n: usize, d: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

/// Specification of one synthetic Sum-task dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Sample count.
    pub m: usize,
    /// Nodes per graph.
    pub n: usize,
    /// Feature dimension.
    pub d: usize,
    pub dist: GraphDist,
    pub seed: u64,
    /// Instances whose |teacher score| falls below this get resampled
    /// features. Defaults to `1e-3 * sqrt(d)`.
    pub margin_eps: f64,
}

impl DatasetSpec {
    pub fn new(m: usize, n: usize, d: usize, dist: GraphDist, seed: u64) -> Self {
        DatasetSpec { m, n, d, dist, seed, margin_eps: 1e-3 * (d as f64).sqrt() }
    }
}

/// A generated Sum-task dataset with its teacher and class bookkeeping.
#[derive(Clone, Debug)]
pub struct SumDataset {
    pub spec: DatasetSpec,
    pub teacher: TeacherModel,
    pub graphs: Vec<LabeledGraph>,
    /// (negative, positive) counts; classes are recorded, not balanced.
    pub class_counts: (usize, usize),
}

const RESAMPLE_BUDGET: u64 = 1000;

/// Samples topologies and features, labels with a freshly drawn teacher, and
/// resamples features of below-margin instances so `m` is preserved.
pub fn build_dataset(spec: &DatasetSpec) -> Result<SumDataset, SynthError> {
    let teacher = TeacherModel::sample(spec.d, spec.seed);
    build_dataset_with_teacher(spec, &teacher)
}

/// As [`build_dataset`] but with a caller-provided teacher, so several graph
/// distributions can share one labeler and one feature stream.
pub fn build_dataset_with_teacher(
    spec: &DatasetSpec,
    teacher: &TeacherModel,
) -> Result<SumDataset, SynthError> {
    let mut graphs = Vec::with_capacity(spec.m);
    let mut counts = (0usize, 0usize);
    for idx in 0..spec.m {
        let mut g_rng = stream_rng(spec.seed, Stream::Dataset, idx as u64);
        let topo = spec.dist.sample(spec.n, &mut g_rng)?;
        let mut attempt = 0u64;
        let lg = loop {
            let mut f_rng =
                stream_rng(spec.seed, Stream::Features, (idx as u64) + attempt * spec.m as u64);
            let x = sample_features(spec.n, spec.d, &mut f_rng);
            let g = Graph::new(topo.clone(), x).expect("shape is consistent");
            match teacher_label(teacher, &g, spec.margin_eps)? {
                LabelOutcome::Label(y) => break LabeledGraph { graph: g, label: y as i64 },
                LabelOutcome::Resample => {
                    attempt += 1;
                    if attempt >= RESAMPLE_BUDGET {
                        return Err(SynthError::ResampleBudget(idx));
                    }
                }
            }
        };
        if lg.label > 0 {
            counts.1 += 1;
        } else {
            counts.0 += 1;
        }
        graphs.push(lg);
    }
    Ok(SumDataset { spec: spec.clone(), teacher: teacher.clone(), graphs, class_counts: counts })
}

/// Relabels a dataset's graphs onto new topologies from `dist`, keeping every
/// feature matrix and label. The teacher is graph-less, so labels stay valid.
pub fn rewire_dataset(
    graphs: &[LabeledGraph],
    dist: GraphDist,
    n: usize,
    seed: u64,
    salt: u64,
) -> Result<Vec<LabeledGraph>, SynthError> {
    graphs
        .iter()
        .enumerate()
        .map(|(idx, lg)| {
            let mut rng = stream_rng(seed ^ salt, Stream::Dataset, idx as u64);
            let topo = dist.sample(n, &mut rng)?;
            let graph = lg.graph.rewired(topo).expect("same node count");
            Ok(LabeledGraph { graph, label: lg.label })
        })
        .collect()
}

/// Strips all edges, the GNN-on-empty-graphs baseline.
pub fn strip_edges(graphs: &[LabeledGraph]) -> Vec<LabeledGraph> {
    graphs
        .iter()
        .map(|lg| LabeledGraph {
            graph: lg.graph.rewired(Topology::empty(lg.graph.n()).unwrap()).unwrap(),
            label: lg.label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_stats;

    fn rng(i: u64) -> ChaCha12Rng {
        stream_rng(42, Stream::Dataset, i)
    }

    #[test]
    fn gnp_extremes() {
        let g0 = gen_gnp(8, 0.0, &mut rng(0)).unwrap();
        assert_eq!(g0.num_edges(), 0);
        let g1 = gen_gnp(8, 1.0, &mut rng(1)).unwrap();
        assert_eq!(g1.num_edges(), 8 * 7 / 2);
        assert!(g1.degrees().iter().all(|&d| d == 7));
        assert!(gen_gnp(8, 1.5, &mut rng(2)).is_err());
    }

    #[test]
    fn gnp_edge_count_matches_binomial_mean() {
        // 1000 trials of G(100, 0.5): mean edge count within 3 sigma of
        // p*n(n-1)/2 = 2475, sigma = sqrt(N p (1-p) / trials).
        let trials = 1000;
        let total: usize =
            (0..trials).map(|i| gen_gnp(100, 0.5, &mut rng(i)).unwrap().num_edges()).sum();
        let mean = total as f64 / trials as f64;
        let sigma = (4950.0 * 0.25 / trials as f64).sqrt();
        assert!((mean - 2475.0).abs() < 3.0 * sigma, "mean {mean} vs 2475 +- {}", 3.0 * sigma);
    }

    #[test]
    fn regular_properties() {
        assert_eq!(gen_regular(7, 0, &mut rng(0)).unwrap().num_edges(), 0);
        let complete = gen_regular(6, 5, &mut rng(1)).unwrap();
        assert_eq!(complete.num_edges(), 15);
        assert!(gen_regular(6, 6, &mut rng(2)).is_err());
        assert!(gen_regular(5, 3, &mut rng(3)).is_err()); // odd n*r
        for i in 0..20 {
            let t = gen_regular(20, 10, &mut rng(i)).unwrap();
            let st = degree_stats(&t);
            assert!(st.degrees.iter().all(|&d| d == 10));
            assert_eq!(st.cov, 0.0);
        }
    }

    #[test]
    fn regular_sparse_uses_configuration_model_variety() {
        let a = gen_regular(20, 2, &mut rng(0)).unwrap();
        let b = gen_regular(20, 2, &mut rng(1)).unwrap();
        assert!(a.degrees().iter().all(|&d| d == 2));
        assert_ne!(a.edges(), b.edges());
    }

    #[test]
    fn ba_seed_clique_and_edge_count() {
        // n = m+1: just the seed clique.
        let t = gen_ba(4, 3, &mut rng(0)).unwrap();
        assert_eq!(t.num_edges(), 6);
        // Exact count from the construction rule: C(m+1, 2) + (n - m - 1) * m.
        let t = gen_ba(50, 3, &mut rng(1)).unwrap();
        assert_eq!(t.num_edges(), 6 + (50 - 4) * 3);
        assert!(gen_ba(4, 4, &mut rng(2)).is_err());
    }

    #[test]
    fn ba_heavy_tail() {
        // Max degree strictly above the median degree in >= 99/100 trials.
        let mut hits = 0;
        for i in 0..100 {
            let t = gen_ba(200, 3, &mut rng(i)).unwrap();
            let mut deg = t.degrees();
            deg.sort_unstable();
            if deg[199] > deg[100] {
                hits += 1;
            }
        }
        assert!(hits >= 99, "heavy tail hits {hits}/100");
    }

    #[test]
    fn star_shape() {
        assert_eq!(gen_star(2).unwrap().edges(), &[(0, 1)]);
        let st = degree_stats(&gen_star(20).unwrap());
        assert_eq!(st.degrees[0], 19);
        assert!(st.degrees[1..].iter().all(|&d| d == 1));
        assert!((st.cov - 2.0648).abs() < 1e-4);
        assert!(gen_star(1).is_err());
    }

    #[test]
    fn features_deterministic_and_standard() {
        let a = sample_features(10, 4, &mut rng(7));
        let b = sample_features(10, 4, &mut rng(7));
        assert_eq!(a, b);
        let c = sample_features(10, 4, &mut rng(8));
        assert_ne!(a, c);

        let big = sample_features(1000, 1000, &mut rng(9));
        let mean = big.mean().unwrap();
        let var = big.mapv(|v| v * v).mean().unwrap() - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn teacher_is_graph_less() {
        let spec = DatasetSpec::new(20, 10, 6, GraphDist::Gnp { p: 0.5 }, 3);
        let ds = build_dataset(&spec).unwrap();
        for (salt, dist) in
            [(1, GraphDist::Regular { r: 4 }), (2, GraphDist::Star), (3, GraphDist::Empty)]
        {
            let rewired = rewire_dataset(&ds.graphs, dist, 10, 3, salt).unwrap();
            for (a, b) in ds.graphs.iter().zip(&rewired) {
                assert_eq!(a.graph.features(), b.graph.features());
                let relabel =
                    teacher_label(&ds.teacher, &b.graph, spec.margin_eps).unwrap();
                assert_eq!(relabel, LabelOutcome::Label(a.label as i8));
            }
        }
    }

    #[test]
    fn teacher_flags_zero_margin() {
        let t = TeacherModel::new(Array1::from(vec![1.0, 0.0])).unwrap();
        let g = Graph::new(Topology::empty(2).unwrap(), Array2::zeros((2, 2))).unwrap();
        assert_eq!(teacher_label(&t, &g, 1e-3).unwrap(), LabelOutcome::Resample);
        let g2 = Graph::new(
            Topology::empty(2).unwrap(),
            ndarray::array![[3.0, -4.0], [0.0, -3.0]],
        )
        .unwrap();
        assert_eq!(teacher_label(&t, &g2, 1e-3).unwrap(), LabelOutcome::Label(1));
    }

    #[test]
    fn dataset_separable_and_deterministic() {
        let spec = DatasetSpec::new(50, 8, 4, GraphDist::Ba { m_attach: 2 }, 11);
        let a = build_dataset(&spec).unwrap();
        let b = build_dataset(&spec).unwrap();
        assert_eq!(a.graphs, b.graphs);
        assert_eq!(a.class_counts.0 + a.class_counts.1, 50);
        for lg in &a.graphs {
            let s = a.teacher.score(&lg.graph).unwrap();
            assert!(s.abs() >= spec.margin_eps);
            assert_eq!(s > 0.0, lg.label > 0);
        }
    }
}
