//! Independent solver for the hard-margin problems the implicit-bias theory
//! predicts gradient descent converges to, plus the extrapolation checkers.
//!
//! Each graph becomes a `2d`-dimensional input `z = [pooled_sum,
//! degree_weighted_sum]`; the oracle minimizes `||w||^2` subject to
//! `y (w . z) >= 1` via dual coordinate ascent and certifies the result with
//! an explicit KKT residual. A support-subset enumeration solver cross-checks
//! it on small problems. On r-regular data the stationarity reconstruction
//! `w = sum_l alpha_l y_l z_l` makes the root and topological halves of `w`
//! aligned (`w2 = r w1`), which is exactly the weight-alignment statement the
//! trainer verifies on the gradient-descent side.

use crate::graph::{degree_weighted_sum, delta_sum, pooled_sum, Graph, LabeledGraph};
use crate::models::alignment_residual;
use crate::rng::{stream_rng, Stream};
use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarginError {
    #[error("label {0} is not binary (+-1)")]
    NonBinaryLabel(i64),
    #[error("graphs disagree on feature dimension")]
    DimMismatch,
    #[error("empty problem")]
    Empty,
    #[error("instance {0} has a zero input row; no hard margin exists")]
    ZeroRow(usize),
    #[error("problem is not linearly separable (dual objective exceeded {0:.1e})")]
    Infeasible(f64),
    #[error("dual ascent did not reach tolerance; kkt residual {0:.3e}")]
    NotConverged(f64),
    #[error("brute-force oracle is limited to m <= {max}, got {m}")]
    TooLarge { m: usize, max: usize },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// The max-margin problem in `2d` space.
#[derive(Clone, Debug)]
pub struct MarginProblem {
    /// `m x 2d` rows `[pooled_sum, degree_weighted_sum]`.
    pub z: Array2<f64>,
    /// +-1 labels.
    pub y: Vec<f64>,
    /// Declared regularity degree when every graph is regular with one shared
    /// degree.
    pub r: Option<usize>,
}

/// A KKT-certified hard-margin solution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginSolution {
    pub w: Array1<f64>,
    pub alpha: Vec<f64>,
    /// Geometric margin `1 / ||w||` at functional margin 1.
    pub margin: f64,
    pub kkt_residual: f64,
}

impl MarginSolution {
    /// Root-weight half of `w`.
    pub fn w1(&self) -> ArrayView1<'_, f64> {
        self.w.slice(ndarray::s![..self.w.len() / 2])
    }

    /// Topological-weight half of `w`.
    pub fn w2(&self) -> ArrayView1<'_, f64> {
        self.w.slice(ndarray::s![self.w.len() / 2..])
    }
}

/// Builds the `2d`-dimensional problem from labeled graphs; records `r` when
/// all graphs share one degree.
pub fn build_problem(graphs: &[LabeledGraph]) -> Result<MarginProblem, MarginError> {
    let first = graphs.first().ok_or(MarginError::Empty)?;
    let d = first.graph.dim();
    let mut z = Array2::zeros((graphs.len(), 2 * d));
    let mut y = Vec::with_capacity(graphs.len());
    let mut shared_degree: Option<Option<usize>> = None;
    for (l, lg) in graphs.iter().enumerate() {
        if lg.graph.dim() != d {
            return Err(MarginError::DimMismatch);
        }
        if lg.label != 1 && lg.label != -1 {
            return Err(MarginError::NonBinaryLabel(lg.label));
        }
        y.push(lg.label as f64);
        let pooled = pooled_sum(&lg.graph);
        let weighted = degree_weighted_sum(&lg.graph);
        z.slice_mut(ndarray::s![l, ..d]).assign(&pooled);
        z.slice_mut(ndarray::s![l, d..]).assign(&weighted);

        let degs = lg.graph.topology().degrees();
        let own = if degs.iter().all(|&dg| dg == degs[0]) { Some(degs[0]) } else { None };
        shared_degree = match shared_degree {
            None => Some(own),
            Some(prev) if prev == own => Some(prev),
            Some(_) => Some(None),
        };
    }
    Ok(MarginProblem { z, y, r: shared_degree.flatten() })
}

/// Knobs for [`solve_qp`]; the defaults match the certified configuration
/// (tol 1e-8 on the KKT residual, 1e6 sweep cap, dual bound 1e12).
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub dual_bound: f64,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-8, max_sweeps: 1_000_000, dual_bound: 1e12, seed: 0x51ab }
    }
}

/// Hard-margin solution via dual coordinate ascent with random permutation
/// sweeps, run until the KKT residual (primal feasibility, stationarity,
/// complementary slackness) drops below `tol`.
///
/// Unbounded dual growth past `dual_bound` reports non-separability.
pub fn solve_qp(problem: &MarginProblem, opts: SolveOptions) -> Result<MarginSolution, MarginError> {
    let m = problem.y.len();
    if m == 0 {
        return Err(MarginError::Empty);
    }
    let dim = problem.z.ncols();
    let q: Vec<f64> = (0..m).map(|l| problem.z.row(l).dot(&problem.z.row(l))).collect();
    if let Some(l) = q.iter().position(|&v| v == 0.0) {
        return Err(MarginError::ZeroRow(l));
    }

    let mut alpha = vec![0.0f64; m];
    let mut w = Array1::<f64>::zeros(dim);
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut residual = f64::INFINITY;

    for sweep in 0..opts.max_sweeps {
        order.shuffle(&mut rng);
        for &l in &order {
            let zl = problem.z.row(l);
            let g = 1.0 - problem.y[l] * w.dot(&zl);
            let next = (alpha[l] + g / q[l]).max(0.0);
            let delta = next - alpha[l];
            if delta != 0.0 {
                w.scaled_add(delta * problem.y[l], &zl);
                alpha[l] = next;
            }
        }
        if sweep % 8 == 7 || sweep + 1 == opts.max_sweeps {
            // reconstruct w from stationarity to cancel accumulation drift
            w.fill(0.0);
            for l in 0..m {
                if alpha[l] > 0.0 {
                    w.scaled_add(alpha[l] * problem.y[l], &problem.z.row(l));
                }
            }
            residual = kkt_residual(problem, &w, &alpha);
            if residual <= opts.tol {
                let norm = w.dot(&w).sqrt();
                return Ok(MarginSolution { margin: 1.0 / norm, w, alpha, kkt_residual: residual });
            }
            let dual_obj = alpha.iter().sum::<f64>() - 0.5 * w.dot(&w);
            if dual_obj > opts.dual_bound {
                return Err(MarginError::Infeasible(opts.dual_bound));
            }
        }
    }
    Err(MarginError::NotConverged(residual))
}

/// Max of primal feasibility violation and complementary slackness (the
/// stationarity term vanishes because `w` is reconstructed from the duals).
fn kkt_residual(problem: &MarginProblem, w: &Array1<f64>, alpha: &[f64]) -> f64 {
    let mut res: f64 = 0.0;
    for l in 0..problem.y.len() {
        let s = problem.y[l] * w.dot(&problem.z.row(l));
        res = res.max(1.0 - s);
        res = res.max((alpha[l] * (s - 1.0)).abs());
    }
    res.max(0.0)
}

const BRUTE_FORCE_MAX: usize = 12;

/// Support-subset enumeration oracle: solves the equality-constrained system
/// of every candidate subset and returns the feasible solution of minimum
/// norm. Exponential in `m`, limited to `m <= 12`.
pub fn brute_force_solve(problem: &MarginProblem) -> Result<MarginSolution, MarginError> {
    let m = problem.y.len();
    if m == 0 {
        return Err(MarginError::Empty);
    }
    if m > BRUTE_FORCE_MAX {
        return Err(MarginError::TooLarge { m, max: BRUTE_FORCE_MAX });
    }
    let mut best: Option<(f64, Array1<f64>, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let subset: Vec<usize> = (0..m).filter(|l| mask & (1 << l) != 0).collect();
        let k = subset.len();
        // gram[a][b] = y_a y_b z_a . z_b over the subset
        let mut gram = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                gram[a][b] = problem.y[subset[a]]
                    * problem.y[subset[b]]
                    * problem.z.row(subset[a]).dot(&problem.z.row(subset[b]));
            }
        }
        let Some(beta) = gauss_solve(gram, vec![1.0; k]) else { continue };
        let mut w = Array1::<f64>::zeros(problem.z.ncols());
        for (a, &l) in subset.iter().enumerate() {
            w.scaled_add(beta[a] * problem.y[l], &problem.z.row(l));
        }
        let feasible =
            (0..m).all(|l| problem.y[l] * w.dot(&problem.z.row(l)) >= 1.0 - 1e-9);
        if !feasible {
            continue;
        }
        let norm_sq = w.dot(&w);
        if best.as_ref().map_or(true, |(b, _, _)| norm_sq < *b - 1e-12) {
            let mut alpha = vec![0.0; m];
            for (a, &l) in subset.iter().enumerate() {
                alpha[l] = beta[a];
            }
            best = Some((norm_sq, w, alpha));
        }
    }
    let (norm_sq, w, mut alpha) = best.ok_or(MarginError::Infeasible(f64::INFINITY))?;
    // the optimum's duals are nonnegative up to rounding
    for a in &mut alpha {
        if *a < 0.0 {
            if *a < -1e-7 {
                return Err(MarginError::NotConverged(-*a));
            }
            *a = 0.0;
        }
    }
    let residual = kkt_residual(&MarginProblem { z: problem.z.clone(), y: problem.y.clone(), r: problem.r }, &w, &alpha);
    Ok(MarginSolution { w, alpha, margin: 1.0 / norm_sq.sqrt(), kkt_residual: residual })
}

/// Gaussian elimination with partial pivoting; `None` on (near-)singular
/// systems.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 =
        a.iter().flat_map(|row| row.iter().map(|v| v.abs())).fold(0.0, f64::max).max(1e-300);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// `max_j |w2_j - r w1_j| / ||w1||_inf` for a margin solution against the
/// declared regularity degree.
pub fn alignment_check(sol: &MarginSolution, r: usize) -> f64 {
    alignment_residual(sol.w1(), sol.w2(), r)
}

/// The extrapolation-condition ratio at one `r'`:
/// `|r w1 . delta_sum(g, r')| / |w1 . pooled + r' r w1 . pooled|`.
/// A zero denominator reports `+inf`.
pub fn extrapolation_ratio(
    w1: ArrayView1<'_, f64>,
    r: usize,
    g: &Graph,
    r_prime: usize,
) -> Result<f64, MarginError> {
    let delta = delta_sum(g, r_prime)?;
    let num = (r as f64 * w1.dot(&delta)).abs();
    let a = w1.dot(&pooled_sum(g));
    let den = (a + (r_prime * r) as f64 * a).abs();
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Scan result of the extrapolation condition over integer `r'` in `[0, n-1]`.
///
/// `satisfied` follows the ratio-minimizing `r'`. The denominator-minimizing
/// selection is reported alongside; since the denominator grows with `r'`,
/// that rule always lands on `r' = 0`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SufficientCondition {
    pub min_ratio: f64,
    pub r_prime_star: usize,
    pub satisfied: bool,
    pub denom_rule_ratio: f64,
    pub denom_rule_r_prime: usize,
}

/// Scans integer `r'` in `[0, n-1]` for the minimum extrapolation ratio.
pub fn sufficient_condition(
    w1: ArrayView1<'_, f64>,
    r: usize,
    g: &Graph,
) -> Result<SufficientCondition, MarginError> {
    let mut min_ratio = f64::INFINITY;
    let mut r_prime_star = 0;
    let mut denom_rule_ratio = f64::INFINITY;
    for r_prime in 0..g.n() {
        let ratio = extrapolation_ratio(w1, r, g, r_prime)?;
        if r_prime == 0 {
            denom_rule_ratio = ratio;
        }
        if ratio < min_ratio {
            min_ratio = ratio;
            r_prime_star = r_prime;
        }
    }
    Ok(SufficientCondition {
        min_ratio,
        r_prime_star,
        satisfied: min_ratio <= 1.0,
        denom_rule_ratio,
        denom_rule_r_prime: 0,
    })
}

/// Monte-Carlo estimates of the star-graph failure quantities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StarFailureStats {
    /// Correlation of the center-node term with the full score.
    pub rho_xw: f64,
    /// Correlation of the center-node term with the teacher score.
    pub rho_x_teacher: f64,
    /// Sign-disagreement rate between the aligned predictor and the teacher.
    pub error_rate: f64,
}

/// Samples star graphs with scalar standard-normal features and measures how
/// the aligned predictor trained on r-regular graphs behaves on them.
///
/// The aligned predictor on a star with center feature `x_1` scores
/// `W = w1 sum_i x_i + r w1 ((n-1) x_1 + sum_{i>=2} x_i)`; the center-node
/// term is `X = r w1 (n-1) x_1` and the teacher scores `w* sum_i x_i`. The
/// correlations and the disagreement rate are scale-invariant in `w1` and
/// `w*`, so both are fixed at 1 with matching signs (training fixes the sign).
pub fn star_failure_stats(n: usize, r: usize, trials: usize, seed: u64) -> StarFailureStats {
    assert!(n >= 2, "star needs at least 2 nodes");
    assert!(trials >= 100, "too few trials for stable correlations");
    let samples: Vec<(f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, Stream::Trial, t as u64);
            let normal = StandardNormal;
            let center: f64 = normal.sample(&mut rng);
            let mut total = center;
            let mut spokes = 0.0;
            for _ in 1..n {
                let v: f64 = normal.sample(&mut rng);
                total += v;
                spokes += v;
            }
            let x = (r * (n - 1)) as f64 * center;
            let w = total + r as f64 * ((n - 1) as f64 * center + spokes);
            let teacher = total;
            (x, w, teacher)
        })
        .collect();

    let err = samples.iter().filter(|(_, w, t)| (*w > 0.0) != (*t > 0.0)).count();
    StarFailureStats {
        rho_xw: pearson(samples.iter().map(|s| (s.0, s.1))),
        rho_x_teacher: pearson(samples.iter().map(|s| (s.0, s.2))),
        error_rate: err as f64 / trials as f64,
    }
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = pairs.clone().count() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cov = sxy - sx * sy / n;
    let vx = sxx - sx * sx / n;
    let vy = syy - sy * sy / n;
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Topology};
    use crate::synth::{gen_gnp, gen_regular, gen_star, sample_features};
    use ndarray::array;

    fn toy_problem(z: Array2<f64>, y: Vec<f64>) -> MarginProblem {
        MarginProblem { z, y, r: None }
    }

    fn random_separable(m: usize, dim: usize, seed: u64) -> MarginProblem {
        let mut rng = stream_rng(seed, Stream::Trial, 0);
        let v: Array1<f64> =
            Array1::from_iter((0..dim).map(|_| StandardNormal.sample(&mut rng)));
        loop {
            let z = Array2::from_shape_fn((m, dim), |_| StandardNormal.sample(&mut rng));
            let scores: Vec<f64> = (0..m).map(|l| z.row(l).dot(&v)).collect();
            if scores.iter().all(|s| s.abs() > 0.3) {
                let y = scores.iter().map(|s| s.signum()).collect();
                return toy_problem(z, y);
            }
        }
    }

    #[test]
    fn build_problem_blocks() {
        let mut rng = stream_rng(5, Stream::Trial, 1);
        // r-regular: second block = r * first block
        let topo = gen_regular(10, 4, &mut rng).unwrap();
        let graphs: Vec<LabeledGraph> = (0..6)
            .map(|i| LabeledGraph {
                graph: Graph::new(topo.clone(), sample_features(10, 3, &mut rng)).unwrap(),
                label: if i % 2 == 0 { 1 } else { -1 },
            })
            .collect();
        let p = build_problem(&graphs).unwrap();
        assert_eq!(p.r, Some(4));
        for l in 0..6 {
            for j in 0..3 {
                assert!((p.z[[l, j + 3]] - 4.0 * p.z[[l, j]]).abs() < 1e-10);
            }
        }

        // empty graphs: second block zero, r = Some(0)
        let empty: Vec<LabeledGraph> = (0..3)
            .map(|_| LabeledGraph {
                graph: Graph::new(Topology::empty(5).unwrap(), sample_features(5, 2, &mut rng))
                    .unwrap(),
                label: 1,
            })
            .collect();
        let p = build_problem(&empty).unwrap();
        assert_eq!(p.r, Some(0));
        assert!(p.z.slice(ndarray::s![.., 2..]).iter().all(|&v| v == 0.0));

        // mixed GNP: rows match the double-loop neighbor-sum oracle
        let topo = gen_gnp(8, 0.5, &mut rng).unwrap();
        let g = Graph::new(topo, sample_features(8, 2, &mut rng)).unwrap();
        let p = build_problem(&[LabeledGraph { graph: g.clone(), label: -1 }]).unwrap();
        assert_eq!(p.r, None);
        let adj = g.topology().adjacency();
        let mut oracle = vec![0.0; 2];
        for i in 0..8 {
            for &j in &adj[i] {
                for c in 0..2 {
                    oracle[c] += g.features()[[j, c]];
                }
            }
        }
        for c in 0..2 {
            assert!((p.z[[0, 2 + c]] - oracle[c]).abs() < 1e-10);
        }

        let bad = vec![LabeledGraph { graph: g, label: 2 }];
        assert!(matches!(build_problem(&bad), Err(MarginError::NonBinaryLabel(2))));
    }

    #[test]
    fn qp_single_instance() {
        let z = array![[3.0, 4.0]];
        let p = toy_problem(z, vec![-1.0]);
        let sol = solve_qp(&p, SolveOptions::default()).unwrap();
        // w = y z / ||z||^2
        assert!((sol.w[0] + 3.0 / 25.0).abs() < 1e-8);
        assert!((sol.w[1] + 4.0 / 25.0).abs() < 1e-8);
        assert!((sol.margin - 5.0).abs() < 1e-7);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn qp_symmetric_pair_closed_form() {
        let u = array![1.0, -2.0, 0.5];
        let z = ndarray::stack![ndarray::Axis(0), u, u.mapv(|v| -v)];
        let p = toy_problem(z, vec![1.0, -1.0]);
        let sol = solve_qp(&p, SolveOptions::default()).unwrap();
        let norm_sq = u.dot(&u);
        for j in 0..3 {
            assert!((sol.w[j] - u[j] / norm_sq).abs() < 1e-8);
        }
        assert!((sol.margin - norm_sq.sqrt()).abs() < 1e-7);

        let brute = brute_force_solve(&p).unwrap();
        for j in 0..3 {
            assert!((brute.w[j] - sol.w[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn qp_duplicates_match_dedup() {
        let base = random_separable(5, 4, 9);
        let mut z = base.z.clone();
        let mut y = base.y.clone();
        // duplicate instance 0 twice
        z.push_row(base.z.row(0)).unwrap();
        z.push_row(base.z.row(0)).unwrap();
        y.push(base.y[0]);
        y.push(base.y[0]);
        let dup = toy_problem(z, y);
        let a = solve_qp(&base, SolveOptions::default()).unwrap();
        let b = solve_qp(&dup, SolveOptions::default()).unwrap();
        for j in 0..4 {
            assert!((a.w[j] - b.w[j]).abs() < 1e-6);
        }
        assert!((a.margin - b.margin).abs() < 1e-7);
    }

    #[test]
    fn qp_kkt_certificate_holds() {
        for seed in 0..5 {
            let p = random_separable(12, 5, 100 + seed);
            let sol = solve_qp(&p, SolveOptions::default()).unwrap();
            assert!(sol.alpha.iter().all(|&a| a >= 0.0));
            for l in 0..12 {
                let s = p.y[l] * sol.w.dot(&p.z.row(l));
                assert!(s >= 1.0 - 1e-8, "feasibility {s}");
                assert!((sol.alpha[l] * (s - 1.0)).abs() <= 1e-8, "slackness");
            }
            // stationarity: w equals its dual reconstruction
            let mut w = Array1::<f64>::zeros(5);
            for l in 0..12 {
                w.scaled_add(sol.alpha[l] * p.y[l], &p.z.row(l));
            }
            assert!((&w - &sol.w).iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn qp_agrees_with_brute_force() {
        for seed in 0..10 {
            let p = random_separable(6, 3, 200 + seed);
            let a = solve_qp(&p, SolveOptions::default()).unwrap();
            let b = brute_force_solve(&p).unwrap();
            for j in 0..3 {
                assert!((a.w[j] - b.w[j]).abs() < 1e-6, "seed {seed}");
            }
            assert!((a.margin - b.margin).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_is_detected() {
        // identical inputs, contradictory labels
        let z = array![[1.0, 0.0], [1.0, 0.0]];
        let p = toy_problem(z, vec![1.0, -1.0]);
        let opts = SolveOptions { dual_bound: 1e3, ..Default::default() };
        assert!(matches!(solve_qp(&p, opts), Err(MarginError::Infeasible(_))));
        assert!(matches!(brute_force_solve(&p), Err(MarginError::Infeasible(_))));
    }

    #[test]
    fn regular_solutions_are_aligned() {
        let mut rng = stream_rng(13, Stream::Trial, 0);
        for r in [1usize, 3, 5] {
            let topo = gen_regular(12, r, &mut rng).unwrap();
            let teacher: Array1<f64> =
                Array1::from_iter((0..4).map(|_| StandardNormal.sample(&mut rng)));
            let graphs: Vec<LabeledGraph> = (0..15)
                .map(|_| {
                    let x = sample_features(12, 4, &mut rng);
                    let g = Graph::new(topo.clone(), x).unwrap();
                    let y = if teacher.dot(&pooled_sum(&g)) > 0.0 { 1 } else { -1 };
                    LabeledGraph { graph: g, label: y }
                })
                .collect();
            let p = build_problem(&graphs).unwrap();
            assert_eq!(p.r, Some(r));
            let sol = solve_qp(&p, SolveOptions::default()).unwrap();
            assert!(alignment_check(&sol, r) <= 1e-7, "r = {r}");
        }
    }

    #[test]
    fn alignment_check_hand_values() {
        let w = Array1::from(vec![1.0, -2.0, 3.0, -6.0]); // w1 = (1,-2), w2 = (3,-6) = 3 w1
        let sol = MarginSolution { w, alpha: vec![], margin: 1.0, kkt_residual: 0.0 };
        assert_eq!(alignment_check(&sol, 3), 0.0);
        let w = Array1::from(vec![1.0, -2.0, 0.0, 0.0]);
        let sol = MarginSolution { w, alpha: vec![], margin: 1.0, kkt_residual: 0.0 };
        // w2 = 0: residual = max|0 - 3 w1_j| / ||w1||_inf = 3*2/2 = 3... r=1 gives 1
        assert_eq!(alignment_check(&sol, 1), 1.0);
    }

    #[test]
    fn ratio_zero_on_matching_regular_graph() {
        let mut rng = stream_rng(21, Stream::Trial, 0);
        let topo = gen_regular(10, 4, &mut rng).unwrap();
        let g = Graph::new(topo, sample_features(10, 3, &mut rng)).unwrap();
        let w1 = Array1::from(vec![0.3, -0.7, 0.2]);
        let ratio = extrapolation_ratio(w1.view(), 5, &g, 4).unwrap();
        assert!(ratio.abs() < 1e-12);

        let empty = Graph::new(Topology::empty(6).unwrap(), sample_features(6, 3, &mut rng)).unwrap();
        let ratio = extrapolation_ratio(w1.view(), 5, &empty, 0).unwrap();
        assert!(ratio.abs() < 1e-12);

        let sc = sufficient_condition(w1.view(), 5, &g).unwrap();
        assert_eq!(sc.r_prime_star, 4);
        assert!(sc.satisfied);
        assert!(sc.min_ratio.abs() < 1e-12);
    }

    #[test]
    fn ratio_matches_direct_evaluation_on_star() {
        let mut rng = stream_rng(22, Stream::Trial, 0);
        let g = Graph::new(gen_star(20).unwrap(), sample_features(20, 4, &mut rng)).unwrap();
        let w1: Array1<f64> = Array1::from_iter((0..4).map(|_| StandardNormal.sample(&mut rng)));
        let r = 5usize;
        let sc = sufficient_condition(w1.view(), r, &g).unwrap();
        // recompute numerator and denominator from raw sums at the argmin
        let rp = sc.r_prime_star;
        let degs = g.topology().degrees();
        let mut delta = vec![0.0; 4];
        for i in 0..20 {
            for c in 0..4 {
                delta[c] += (degs[i] as f64 - rp as f64) * g.features()[[i, c]];
            }
        }
        let num = (r as f64 * w1.dot(&Array1::from(delta))).abs();
        let a = w1.dot(&pooled_sum(&g));
        let den = (a + (rp * r) as f64 * a).abs();
        assert!((sc.min_ratio - num / den).abs() < 1e-12);
        assert!(sc.min_ratio.is_finite());
        // denominator rule always lands on r' = 0
        assert_eq!(sc.denom_rule_r_prime, 0);
        let r0 = extrapolation_ratio(w1.view(), r, &g, 0).unwrap();
        assert!((sc.denom_rule_ratio - r0).abs() < 1e-15);
    }

    #[test]
    fn star_failure_smoke() {
        let stats = star_failure_stats(2000, 10, 2000, 7);
        assert!(stats.rho_xw >= 0.97, "rho_xw {}", stats.rho_xw);
        assert!(stats.rho_x_teacher.abs() <= 0.1, "rho_xt {}", stats.rho_x_teacher);
        assert!(stats.error_rate >= 0.25, "error {}", stats.error_rate);
        // deterministic per seed
        let again = star_failure_stats(2000, 10, 2000, 7);
        assert_eq!(stats.rho_xw, again.rho_xw);
        assert_eq!(stats.error_rate, again.error_rate);
    }
}
