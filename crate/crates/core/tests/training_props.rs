//! Property tests over the algebra, metrics, and training surfaces.

use finextract_core::extraction::{enumerate_maximal_cliques, CliqueBudget, SimilarityGraph};
use finextract_core::guidance::{cfg_eps, finextract_eps, model_guidance_eps};
use finextract_core::metrics::{a_esr, average_similarity, raw_cosine, SimilarityFn};
use finextract_core::mlp::{ArchSpec, MLPDenoiser};
use finextract_core::schedule::NoiseSchedule;
use finextract_core::train::{finetune_lora, OptimizerKind, TrainConfig};
use finextract_core::vocab::VocabSpec;
use ndarray::Array2;
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 3)
}

proptest! {
    #[test]
    fn finextract_k0_equals_cfg(c in vec3(), u in vec3(), w in 1.0..8.0f64) {
        let fx = finextract_eps(&c, &u, w, 0.0).unwrap();
        let cf = cfg_eps(&c, &u, w).unwrap();
        prop_assert_eq!(fx, cf);
    }

    #[test]
    fn neutral_scales_are_identity(c in vec3(), u in vec3()) {
        prop_assert_eq!(finextract_eps(&c, &u, 1.0, 0.0).unwrap(), c.clone());
        prop_assert_eq!(cfg_eps(&c, &u, 1.0).unwrap(), c.clone());
        prop_assert_eq!(model_guidance_eps(&c, &u, 1.0).unwrap(), c);
    }

    #[test]
    fn guidance_is_linear_extrapolation(c in vec3(), u in vec3(), w in 1.0..8.0f64) {
        // All three combinators agree with the two-point line through
        // (0, u-side) and (1, c-side) evaluated at w.
        let fx = cfg_eps(&c, &u, w).unwrap();
        for j in 0..3 {
            let line = (1.0 - w) * u[j] + w * c[j];
            prop_assert!((fx[j] - line).abs() <= 1e-9 * (1.0 + line.abs()));
        }
    }

    #[test]
    fn cosine_symmetric_bounded(x in vec3(), y in vec3()) {
        let a = raw_cosine(&x, &y);
        let b = raw_cosine(&y, &x);
        prop_assert_eq!(a, b);
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((raw_cosine(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_positive_scale_invariant(x in vec3(), y in vec3(), s in 0.01..100.0f64) {
        let scaled: Vec<f64> = y.iter().map(|v| v * s).collect();
        let a = raw_cosine(&x, &y);
        let b = raw_cosine(&x, &scaled);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn esr_decreases_in_tau_and_as_grows_with_candidates(
        seed in 0u64..1000,
        n0 in 1usize..6,
        n in 1usize..10,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x0 = Array2::from_shape_fn((n0, 3), |_| rng.gen_range(-2.0..2.0));
        let xh = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-2.0..2.0));
        let sim = SimilarityFn::cosine01();

        let loose = a_esr(&x0, &xh, &sim, 0.6).unwrap();
        let strict = a_esr(&x0, &xh, &sim, 0.7).unwrap();
        prop_assert!(strict <= loose);
        prop_assert!((0.0..=1.0).contains(&loose));

        // Adding candidates can only improve every best match.
        let extra = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-2.0..2.0));
        let mut bigger = Array2::zeros((n + 2, 3));
        bigger.slice_mut(ndarray::s![..n, ..]).assign(&xh);
        bigger.slice_mut(ndarray::s![n.., ..]).assign(&extra);
        let before = average_similarity(&x0, &xh, &sim).unwrap();
        let after = average_similarity(&x0, &bigger, &sim).unwrap();
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn returned_cliques_are_maximal_cliques(seed in 0u64..400, phi in 0.1..0.9f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=10);
        let mut sims = Array2::zeros((n, n));
        for i in 0..n {
            sims[[i, i]] = 1.0;
            for j in (i + 1)..n {
                let s: f64 = rng.gen_range(0.0..=1.0);
                sims[[i, j]] = s;
                sims[[j, i]] = s;
            }
        }
        let graph = SimilarityGraph::from_matrix(sims).unwrap();
        let set = enumerate_maximal_cliques(&graph, phi, CliqueBudget::default()).unwrap();
        for clique in &set.cliques {
            for (a, &i) in clique.iter().enumerate() {
                for &j in &clique[a + 1..] {
                    prop_assert!(graph.sim(i, j) >= phi);
                }
            }
            for v in 0..n {
                if clique.contains(&v) {
                    continue;
                }
                let joins_all = clique.iter().all(|&i| graph.sim(v, i) >= phi);
                prop_assert!(!joins_all, "clique {clique:?} not maximal: {v} joins");
            }
        }
        // Every vertex is in at least one maximal clique.
        let mut seen = vec![false; n];
        for clique in &set.cliques {
            for &v in clique {
                seen[v] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn lora_delta_has_bounded_rank() {
    let arch = ArchSpec {
        x_dim: 2,
        hidden: 16,
        time_freqs: 3,
        time_scale: 100,
        vocab: VocabSpec {
            size: 16,
            emb_dim: 6,
            seed: 2,
        },
    };
    let schedule = NoiseSchedule::default_linear();
    let model = MLPDenoiser::init(arch, 31).unwrap();
    let cfg = TrainConfig {
        steps: 120,
        lr: 1e-3,
        optimizer: OptimizerKind::Adam,
        batch_size: 4,
        seed: 77,
    };
    // Rank is capped by the narrowest adapted matrix (w3 is x_dim rows).
    for rank in [1usize, 2] {
        let tuned =
            finetune_lora(&model, &[(vec![0.3, 0.9], vec![3])], rank, &cfg, &schedule).unwrap();
        for name in ["w1", "wc", "w2", "w3"] {
            let delta = tuned.layer_matrix(name).unwrap() - model.layer_matrix(name).unwrap();
            let m = nalgebra::DMatrix::from_fn(delta.nrows(), delta.ncols(), |i, j| delta[[i, j]]);
            let svd = m.svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(sv[0] > 0.0, "{name} delta should be nonzero");
            if sv.len() > rank {
                assert!(
                    sv[rank] < 1e-9 * sv[0].max(1.0),
                    "{name} rank-{rank} delta has sigma_{} = {}",
                    rank + 1,
                    sv[rank]
                );
            }
        }
        // Biases never move under the adapter.
        assert_eq!(tuned.params().b1, model.params().b1);
        assert_eq!(tuned.params().b2, model.params().b2);
        assert_eq!(tuned.params().b3, model.params().b3);
    }
}
