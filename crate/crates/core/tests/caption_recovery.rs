//! Caption recovery against the training loop and a dense-SVD oracle.
//!
//! Fine-tuning with plain gradient descent on a single fixed caption only
//! ever adds outer products with that caption's embedding to the
//! condition-facing weights, so the weight delta is exactly rank one with
//! its row space spanned by the token embedding. That premise, and the
//! recovery built on it, are checked here with nalgebra as an independent
//! second route for the linear algebra.

use finextract_core::caption::{
    export_layer_pair, hard_prompt_extract, principal_direction, rowspace_argmax_single,
};
use finextract_core::mlp::{ArchSpec, MLPDenoiser};
use finextract_core::schedule::NoiseSchedule;
use finextract_core::train::{finetune_full, OptimizerKind, TrainConfig};
use finextract_core::vocab::VocabSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch() -> ArchSpec {
    ArchSpec {
        x_dim: 2,
        hidden: 16,
        time_freqs: 3,
        time_scale: 100,
        vocab: VocabSpec {
            size: 24,
            emb_dim: 8,
            seed: 7,
        },
    }
}

fn to_nalgebra(m: &ndarray::Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

#[test]
fn single_token_gradient_descent_recovers_token_20_of_20() {
    let arch = arch();
    let schedule = NoiseSchedule::default_linear();
    let mut hits = 0;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        // Token 0 is the null token used for unconditional prediction; the
        // planted caption is any other token.
        let token = rng.gen_range(1..arch.vocab.size);
        let x0 = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let model = MLPDenoiser::init(arch.clone(), 50 + trial).unwrap();
        let cfg = TrainConfig {
            steps: 300,
            lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            batch_size: 4,
            seed: 9000 + trial,
        };
        let tuned = finetune_full(&model, &[(x0, vec![token])], &cfg, &schedule).unwrap();

        let pairs = export_layer_pair(&model, &tuned, &["wc"]).unwrap();
        let recovered = rowspace_argmax_single(&pairs, model.vocab()).unwrap();
        if recovered == token {
            hits += 1;
        }

        // Rank-one premise: the second singular value of the delta is
        // noise-level relative to the first.
        let delta = to_nalgebra(&pairs[0].delta());
        let svd = delta.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(
            sv[1] < 1e-8 * sv[0],
            "trial {trial}: sigma2/sigma1 = {}",
            sv[1] / sv[0]
        );
    }
    assert_eq!(hits, 20, "recovered {hits}/20");
}

#[test]
fn unconditional_finetune_recovers_null_token() {
    // Fine-tuning on the null caption is the unconditional setting; the
    // delta's row space then points at token 0's embedding.
    let arch = arch();
    let schedule = NoiseSchedule::default_linear();
    let model = MLPDenoiser::init(arch, 3).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        lr: 0.05,
        optimizer: OptimizerKind::Sgd,
        batch_size: 4,
        seed: 4,
    };
    let tuned = finetune_full(&model, &[(vec![0.5, -0.5], vec![0])], &cfg, &schedule).unwrap();
    let pairs = export_layer_pair(&model, &tuned, &["wc"]).unwrap();
    assert_eq!(rowspace_argmax_single(&pairs, model.vocab()).unwrap(), 0);
}

#[test]
fn principal_direction_matches_dense_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDEC0);
    for trial in 0..25 {
        let rows = rng.gen_range(3..=12);
        let cols = rng.gen_range(2..=8);
        let m = ndarray::Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0));
        let got = principal_direction(&m).unwrap();

        let svd = to_nalgebra(&m).svd(false, true);
        let vt = svd.v_t.unwrap();
        let top = vt.row(0);
        let cos: f64 = (0..cols).map(|j| got[j] * top[j]).sum();
        // Random matrices have a decent spectral gap almost surely; allow
        // a few ulps of iteration error, sign-free.
        assert!(
            cos.abs() > 1.0 - 1e-8,
            "trial {trial} ({rows}x{cols}): |cos| = {}",
            cos.abs()
        );
    }
}

#[test]
fn hard_prompt_attack_on_trained_delta() {
    // End-to-end attack on a real fine-tune, in the regime where the
    // fine-tune delta rivals the base spectrum so the per-side principal
    // directions differ along the planted token. Two properties hold
    // there: the objective's argmax over the vocabulary is the true
    // token, and the projected-gradient loop surfaces that token in its
    // output. The loop's objective is sign-blind (|<M, e>|), so each
    // prompt position converges to the best-aligned or best-anti-aligned
    // token depending on its random initialization; with three positions
    // the true token shows up among them, matching the headline behavior
    // of recovering key words rather than whole captions.
    use finextract_core::caption::{build_objective, ObjectiveVariant};
    let arch = arch();
    let schedule = NoiseSchedule::default_linear();
    let token = 5usize;
    let model = MLPDenoiser::init(arch, 11).unwrap();
    let cfg = TrainConfig {
        steps: 40_000,
        lr: 0.1,
        optimizer: OptimizerKind::Sgd,
        batch_size: 4,
        seed: 12,
    };
    let tuned = finetune_full(&model, &[(vec![0.8, 0.2], vec![token])], &cfg, &schedule).unwrap();
    let pairs = export_layer_pair(&model, &tuned, &["wc"]).unwrap();

    let obj = build_objective(&pairs, ObjectiveVariant::PcaDifference).unwrap();
    let best = (0..model.vocab().size())
        .max_by(|&a, &b| {
            let fa = obj.value_and_grad(&model.vocab().embedding(a).unwrap()).unwrap().0;
            let fb = obj.value_and_grad(&model.vocab().embedding(b).unwrap()).unwrap().0;
            fa.partial_cmp(&fb).unwrap()
        })
        .unwrap();
    assert_eq!(best, token, "vocabulary argmax of the objective");

    let got = hard_prompt_extract(&pairs, model.vocab(), 3, 500, 0.05, 0).unwrap();
    assert!(
        got.tokens.contains(&token),
        "true token missing from {:?}",
        got.tokens
    );
    // The objective trajectory is reported for every iteration.
    assert_eq!(got.trajectory.len(), 500);
    assert!(got.trajectory.iter().all(|f| f.is_finite()));
}
