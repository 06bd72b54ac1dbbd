//! Ancestral sampling for the discrete diffusion process.

use ndarray::Array2;

use crate::denoiser::{Denoiser, SampleBatch};
use crate::error::{CoreError, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Generate n samples by running the reverse chain from t = T down to 1.
///
/// Every stochastic draw is a pure function of (seed, sample index, step):
/// the initial x_T uses step key 0 and the transition noise into step t-1
/// uses step key t. Two runs with the same seed are bitwise identical, and
/// the noise stream does not depend on which denoiser is plugged in, so
/// guidance configurations that agree algebraically produce identical
/// batches.
///
/// The reverse transition is x_{t-1} = mu_t + sqrt(beta_t) z with
/// mu_t = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t);
/// the final step (t = 1) adds no noise.
pub fn ancestral_sample(
    model: &dyn Denoiser,
    schedule: &NoiseSchedule,
    n: usize,
    tokens: Option<&[usize]>,
    seed: u64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(CoreError::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let d = model.dim();
    let t_max = schedule.num_steps();
    let mut points = Array2::zeros((n, d));

    for i in 0..n {
        let mut x = rng::standard_normal_vec(seed, i as u64, 0, d);
        for t in (1..=t_max).rev() {
            let eps = model.predict_eps(&x, t, tokens)?;
            if eps.len() != d {
                return Err(CoreError::ShapeMismatch {
                    what: "ancestral_sample",
                    expected: format!("eps of dim {d}"),
                    got: format!("dim {}", eps.len()),
                });
            }
            if eps.iter().any(|e| !e.is_finite()) {
                return Err(CoreError::NumericFailure {
                    context: format!("denoiser output at step {t}"),
                });
            }
            let beta = schedule.beta(t);
            let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
            let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
            for j in 0..d {
                x[j] = (x[j] - coef * eps[j]) * inv_sqrt_alpha;
            }
            if t > 1 {
                let z = rng::standard_normal_vec(seed, i as u64, t as u64, d);
                let sigma = beta.sqrt();
                for j in 0..d {
                    x[j] += sigma * z[j];
                }
            }
        }
        for j in 0..d {
            points[[i, j]] = x[j];
        }
    }

    Ok(SampleBatch {
        points,
        seed,
        provenance: format!("ancestral(n={n}, steps={t_max}, seed={seed})"),
    })
}
