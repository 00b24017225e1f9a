//! Property tests for the graph aggregates and generators.

use ndarray::Array2;
use proptest::prelude::*;
use structfit::graph::{
    degree_stats, degree_weighted_sum, delta_sum, pooled_sum, read_jsonl, write_jsonl, Graph,
    Topology,
};
use structfit::rng::{stream_rng, Stream};
use structfit::synth::sample_features;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..12, 1usize..5, any::<u64>(), 0.0f64..1.0).prop_map(|(n, d, seed, p)| {
        let mut rng = stream_rng(seed, Stream::Dataset, 0);
        let topo = structfit::synth::gen_gnp(n, p, &mut rng).unwrap();
        let x = sample_features(n, d, &mut rng);
        Graph::new(topo, x).unwrap()
    })
}

proptest! {
    #[test]
    fn degree_weighted_sum_equals_neighbor_double_loop(g in arb_graph()) {
        let fast = degree_weighted_sum(&g);
        let adj = g.topology().adjacency();
        let mut slow = vec![0.0; g.dim()];
        for i in 0..g.n() {
            for &j in &adj[i] {
                for c in 0..g.dim() {
                    slow[c] += g.features()[[j, c]];
                }
            }
        }
        for c in 0..g.dim() {
            prop_assert!((fast[c] - slow[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_sum_identity(g in arb_graph(), r_prime in 0usize..11) {
        prop_assume!(r_prime <= g.n() - 1);
        let lhs = delta_sum(&g, r_prime).unwrap() + pooled_sum(&g) * r_prime as f64;
        let rhs = degree_weighted_sum(&g);
        for c in 0..g.dim() {
            prop_assert!((lhs[c] - rhs[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn cov_invariant_under_relabeling(g in arb_graph(), shift in 1usize..7) {
        let n = g.n();
        let pi: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(i, j)| (pi[i], pi[j])).collect();
        let relabeled = Topology::new(n, edges).unwrap();
        let a = degree_stats(g.topology());
        let b = degree_stats(&relabeled);
        prop_assert_eq!(a.cov, b.cov);
        prop_assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn jsonl_round_trip_preserves_graphs(g in arb_graph(), y in prop::option::of(-1i64..=1)) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[(g.clone(), y)]).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        prop_assert_eq!(&back[0].0, &g);
        prop_assert_eq!(back[0].1, y);
        let mut buf2 = Vec::new();
        write_jsonl(&mut buf2, &back).unwrap();
        prop_assert_eq!(buf, buf2);
    }
}

#[test]
fn zero_feature_matrix_gives_zero_sums() {
    let topo = Topology::new(4, vec![(0, 1), (2, 3)]).unwrap();
    let g = Graph::new(topo, Array2::zeros((4, 3))).unwrap();
    assert!(pooled_sum(&g).iter().all(|&v| v == 0.0));
    assert!(degree_weighted_sum(&g).iter().all(|&v| v == 0.0));
}
