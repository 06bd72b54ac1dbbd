//! Denoising training loss.

use rand::Rng;

use crate::denoiser::Denoiser;
use crate::error::{CoreError, Result};
use crate::schedule::{forward_noise, NoiseSchedule};

/// One training item: a clean point and its optional caption.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x0: Vec<f64>,
    pub tokens: Option<Vec<usize>>,
}

/// Monte-Carlo estimate of the simple denoising loss
/// E_{t, eps} || eps_hat(x_t, t, c) - eps ||^2, averaged over the batch.
///
/// For each item, t is drawn uniformly from 1..=T and eps from N(0, I).
/// A model that always predicts zero scores about d (the expected squared
/// norm of the noise).
pub fn diffusion_loss<R: Rng>(
    model: &dyn Denoiser,
    batch: &[TrainItem],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidArgument("empty training batch".into()));
    }
    let d = model.dim();
    let t_max = schedule.num_steps();
    let mut total = 0.0;
    for item in batch {
        if item.x0.len() != d {
            return Err(CoreError::ShapeMismatch {
                what: "diffusion_loss",
                expected: format!("dim {d}"),
                got: format!("dim {}", item.x0.len()),
            });
        }
        let t = rng.gen_range(1..=t_max);
        let eps: Vec<f64> = (0..d)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let x_t = forward_noise(&item.x0, t, &eps, schedule)?;
        let pred = model.predict_eps(&x_t, t, item.tokens.as_deref())?;
        if pred.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::NumericFailure {
                context: format!("loss prediction at t {t}"),
            });
        }
        total += pred
            .iter()
            .zip(&eps)
            .map(|(p, e)| (p - e) * (p - e))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{AnalyticDenoiser, GaussianMixture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ZeroModel(usize);
    impl Denoiser for ZeroModel {
        fn dim(&self) -> usize {
            self.0
        }
        fn predict_eps(&self, _: &[f64], _: usize, _: Option<&[usize]>) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.0])
        }
    }

    fn unit_items(n: usize, d: usize, seed: u64) -> Vec<TrainItem> {
        let gm = GaussianMixture::isotropic(vec![0.0; d], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gm.sample(n, &mut rng)
            .rows()
            .into_iter()
            .map(|r| TrainItem {
                x0: r.to_vec(),
                tokens: None,
            })
            .collect()
    }

    #[test]
    fn zero_model_scores_dimension() {
        let d = 3;
        let items = unit_items(4_000, d, 1);
        let s = NoiseSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let loss = diffusion_loss(&ZeroModel(d), &items, &s, &mut rng).unwrap();
        assert!(
            (loss - d as f64).abs() < 0.15 * d as f64,
            "expected about {d}, got {loss}"
        );
    }

    #[test]
    fn exact_denoiser_beats_zero_model() {
        let d = 2;
        let items = unit_items(2_000, d, 3);
        let s = NoiseSchedule::default_linear();
        let gm = GaussianMixture::isotropic(vec![0.0; d], 1.0).unwrap();
        let den = AnalyticDenoiser::unconditional(gm, s.clone());
        // Same rng seed on both calls pairs the (t, eps) draws.
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let exact = diffusion_loss(&den, &items, &s, &mut r1).unwrap();
        let zero = diffusion_loss(&ZeroModel(d), &items, &s, &mut r2).unwrap();
        assert!(exact < zero, "exact {exact} vs zero {zero}");
    }

    #[test]
    fn empty_batch_rejected() {
        let s = NoiseSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(diffusion_loss(&ZeroModel(1), &[], &s, &mut rng).is_err());
    }
}
