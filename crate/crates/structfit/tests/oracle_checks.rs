//! Cross-validation of the margin oracle at the scales the contracts name:
//! alignment of QP solutions across regularity degrees, agreement between the
//! dual-ascent solver and the brute-force enumeration oracle, and soundness
//! of the extrapolation condition.

use structfit::margin::{
    alignment_check, brute_force_solve, build_problem, solve_qp, sufficient_condition,
    SolveOptions,
};
use structfit::synth::{build_dataset, rewire_dataset, DatasetSpec, GraphDist};

#[test]
fn qp_alignment_across_regularity_degrees() {
    // r in 1..=8, 20 random datasets each: residual <= 10 * tol
    for r in 1usize..=8 {
        for trial in 0..20u64 {
            let spec =
                DatasetSpec::new(12, 10, 4, GraphDist::Regular { r }, 8100 + r as u64 * 100 + trial);
            let ds = build_dataset(&spec).unwrap();
            let p = build_problem(&ds.graphs).unwrap();
            assert_eq!(p.r, Some(r));
            let sol = solve_qp(&p, SolveOptions::default()).unwrap();
            let resid = alignment_check(&sol, r);
            assert!(resid <= 1e-7, "r={r} trial={trial}: residual {resid}");
        }
    }
}

#[test]
fn qp_matches_brute_force_on_graph_problems() {
    // 50 random problems with m <= 8 drawn from mixed distributions
    let dists = [
        GraphDist::Gnp { p: 0.4 },
        GraphDist::Ba { m_attach: 2 },
        GraphDist::Star,
        GraphDist::Regular { r: 2 },
        GraphDist::Empty,
    ];
    for trial in 0..50u64 {
        let m = 4 + (trial % 5) as usize;
        let dist = dists[trial as usize % dists.len()];
        let spec = DatasetSpec::new(m, 8, 3, dist, 9200 + trial);
        let ds = build_dataset(&spec).unwrap();
        let p = build_problem(&ds.graphs).unwrap();
        let a = solve_qp(&p, SolveOptions::default()).unwrap();
        let b = brute_force_solve(&p).unwrap();
        for j in 0..p.z.ncols() {
            assert!(
                (a.w[j] - b.w[j]).abs() <= 1e-6,
                "trial {trial} coord {j}: {} vs {}",
                a.w[j],
                b.w[j]
            );
        }
        assert!((a.margin - b.margin).abs() <= 1e-6, "trial {trial}");
    }
}

#[test]
fn sufficient_condition_is_sound_on_rewired_instances() {
    // train problem on 5-regular graphs; rewire the same instances and check
    // min_ratio <= 1 implies a correct aligned prediction
    let spec = DatasetSpec::new(60, 14, 16, GraphDist::Regular { r: 5 }, 777);
    let ds = build_dataset(&spec).unwrap();
    let p = build_problem(&ds.graphs).unwrap();
    let sol = solve_qp(&p, SolveOptions::default()).unwrap();
    let w1 = sol.w1().to_owned();
    let mut satisfied = 0;
    for (salt, dist) in [
        (1u64, GraphDist::Gnp { p: 0.5 }),
        (2, GraphDist::Ba { m_attach: 3 }),
        (3, GraphDist::Star),
    ] {
        let rewired = rewire_dataset(&ds.graphs, dist, 14, 777, salt).unwrap();
        for lg in &rewired {
            let sc = sufficient_condition(w1.view(), 5, &lg.graph).unwrap();
            let score = w1.dot(&structfit::graph::pooled_sum(&lg.graph))
                + 5.0 * w1.dot(&structfit::graph::degree_weighted_sum(&lg.graph));
            let correct = (score > 0.0) == (lg.label > 0);
            if sc.satisfied {
                satisfied += 1;
                assert!(correct, "satisfied instance must be correct");
            }
        }
    }
    assert!(satisfied > 100, "condition should hold on most rewired instances: {satisfied}");
}

#[test]
fn aligned_oracle_extrapolates_exactly_within_regular() {
    let spec = DatasetSpec::new(50, 12, 8, GraphDist::Regular { r: 3 }, 919);
    let ds = build_dataset(&spec).unwrap();
    let p = build_problem(&ds.graphs).unwrap();
    let sol = solve_qp(&p, SolveOptions::default()).unwrap();
    let w1 = sol.w1().to_owned();
    for r_prime in [0usize, 2, 5, 9] {
        let rewired =
            rewire_dataset(&ds.graphs, GraphDist::Regular { r: r_prime }, 12, 919, 40 + r_prime as u64)
                .unwrap();
        for lg in &rewired {
            let score =
                (1.0 + (3 * r_prime) as f64) * w1.dot(&structfit::graph::pooled_sum(&lg.graph));
            assert_eq!(score > 0.0, lg.label > 0, "r' = {r_prime}");
        }
    }
}
