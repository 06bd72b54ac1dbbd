//! Clique enumeration vs an independent brute-force oracle.
//!
//! On graphs of at most 15 vertices every subset fits in a u16, so maximal
//! cliques can be found by checking all 2^n subsets directly. The budgeted
//! pivoting search must agree exactly: same cliques, same order, over 200
//! random graphs, including through the threshold sweep.

use finextract_core::extraction::{
    enumerate_maximal_cliques, threshold_clustering, CliqueBudget, ClusteringConfig,
    SimilarityGraph,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All maximal cliques by subset enumeration; cliques sorted ascending,
/// list lexicographic, matching the search's canonical form.
fn brute_force_cliques(graph: &SimilarityGraph, phi: f64) -> Vec<Vec<usize>> {
    let n = graph.len();
    assert!(n <= 15, "oracle is exponential");
    let mut adj = vec![0u16; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && graph.sim(i, j) >= phi {
                adj[i] |= 1 << j;
            }
        }
    }
    let mut cliques = Vec::new();
    for s in 1u32..(1 << n) {
        let s = s as u16;
        let is_clique = (0..n)
            .filter(|&v| s & (1 << v) != 0)
            .all(|v| (s & !(1u16 << v)) & !adj[v] == 0);
        if !is_clique {
            continue;
        }
        let is_maximal = (0..n)
            .filter(|&u| s & (1 << u) == 0)
            .all(|u| s & !adj[u] != 0);
        if is_maximal {
            cliques.push((0..n).filter(|&v| s & (1 << v) != 0).collect::<Vec<_>>());
        }
    }
    cliques.sort();
    cliques
}

fn random_graph(rng: &mut ChaCha8Rng) -> SimilarityGraph {
    let n = rng.gen_range(2..=15);
    let mut sims = Array2::zeros((n, n));
    for i in 0..n {
        sims[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let s: f64 = rng.gen_range(0.0..=1.0);
            sims[[i, j]] = s;
            sims[[j, i]] = s;
        }
    }
    SimilarityGraph::from_matrix(sims).unwrap()
}

#[test]
fn search_matches_brute_force_on_200_random_graphs() {
    let t0 = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC11_0E);
    for trial in 0..200 {
        let graph = random_graph(&mut rng);
        let phi: f64 = rng.gen_range(0.1..=0.95);
        let got = enumerate_maximal_cliques(&graph, phi, CliqueBudget::NodeExpansions(u64::MAX))
            .unwrap();
        assert!(!got.truncated);
        let want = brute_force_cliques(&graph, phi);
        assert_eq!(got.cliques, want, "trial {trial}, n={}, phi={phi}", graph.len());
    }
    assert!(t0.elapsed().as_secs() < 60, "took {:?}", t0.elapsed());
}

#[test]
fn sweep_output_matches_brute_force_at_chosen_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EE_D);
    for _ in 0..50 {
        let graph = random_graph(&mut rng);
        let n_target = rng.gen_range(1..=graph.len());
        let cfg = ClusteringConfig::with_target(n_target);
        let got = threshold_clustering(&graph, &cfg).unwrap();
        assert!(!got.truncated);
        let want = brute_force_cliques(&graph, got.phi_star);
        assert_eq!(got.cliques, want, "phi* = {}", got.phi_star);
    }
}

#[test]
fn dense_and_sparse_extremes() {
    // Complete graph at low threshold: one clique, all vertices. Empty
    // graph at threshold above every similarity: n singleton cliques.
    let mut sims = Array2::zeros((6, 6));
    for i in 0..6 {
        for j in 0..6 {
            sims[[i, j]] = if i == j { 1.0 } else { 0.4 };
        }
    }
    let graph = SimilarityGraph::from_matrix(sims).unwrap();
    let low = enumerate_maximal_cliques(&graph, 0.3, CliqueBudget::default()).unwrap();
    assert_eq!(low.cliques, vec![vec![0, 1, 2, 3, 4, 5]]);
    let high = enumerate_maximal_cliques(&graph, 0.5, CliqueBudget::default()).unwrap();
    assert_eq!(high.cliques.len(), 6);
    assert!(high.cliques.iter().all(|c| c.len() == 1));
    assert_eq!(brute_force_cliques(&graph, 0.3), low.cliques);
    assert_eq!(brute_force_cliques(&graph, 0.5), high.cliques);
}
