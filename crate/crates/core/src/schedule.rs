//! Discrete diffusion noise schedule.
//!
//! Timesteps are 1-indexed: t runs over 1..=T for the noising process, and
//! t = 0 means "clean data" and is handled explicitly by [`forward_noise`].

use crate::error::{CoreError, Result};

/// Variance schedule for a discrete diffusion process.
///
/// Stores beta_t, alpha_t = 1 - beta_t and the running product
/// alpha_bar_t = prod_{s<=t} alpha_s for t = 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` over `t_max` steps.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(CoreError::InvalidArgument(
                "schedule needs at least one step".into(),
            ));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(CoreError::InvalidArgument(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut betas = Vec::with_capacity(t_max);
        if t_max == 1 {
            betas.push(beta_start);
        } else {
            let step = (beta_end - beta_start) / (t_max - 1) as f64;
            for i in 0..t_max {
                betas.push(beta_start + step * i as f64);
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_max);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// The default toy schedule: 100 steps, betas from 1e-4 to 0.02.
    pub fn default_linear() -> Self {
        Self::linear(100, 1e-4, 0.02).expect("default schedule is valid")
    }

    /// Number of diffusion steps T.
    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    /// Error unless 1 <= t <= T.
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            Err(CoreError::ScheduleBounds {
                t,
                t_max: self.num_steps(),
            })
        } else {
            Ok(())
        }
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// alpha_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// alpha_bar_t for t in 1..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}

/// Noise a clean point to time t: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
///
/// t = 0 returns x0 unchanged (no floating-point detour through the formula).
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(CoreError::ShapeMismatch {
            what: "forward_noise",
            expected: format!("eps of dim {}", x0.len()),
            got: format!("dim {}", eps.len()),
        });
    }
    if t == 0 {
        return Ok(x0.to_vec());
    }
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| c0 * x + c1 * e)
        .collect())
}

/// Convert a noise prediction to a score: s = -eps / sqrt(1 - abar_t).
pub fn eps_to_score(eps: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let c = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(eps.iter().map(|e| -e / c).collect())
}

/// Convert a score to a noise prediction: eps = -sqrt(1 - abar_t) * s.
pub fn score_to_eps(score: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let c = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(score.iter().map(|s| -c * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_schedule_endpoints() {
        let s = NoiseSchedule::default_linear();
        assert_eq!(s.num_steps(), 100);
        assert_relative_eq!(s.beta(1), 1e-4);
        assert_relative_eq!(s.beta(100), 0.02);
        // First cumulative product is just alpha_1.
        assert_relative_eq!(s.alpha_bar(1), 1.0 - 1e-4, epsilon = 1e-15);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = NoiseSchedule::default_linear();
        for t in 2..=s.num_steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(s.num_steps()) > 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.02, 1e-4).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 1.0).is_err());
    }

    #[test]
    fn forward_noise_t0_is_identity() {
        let s = NoiseSchedule::default_linear();
        let x0 = vec![1.5, -2.0];
        let eps = vec![0.7, 0.7];
        let out = forward_noise(&x0, 0, &eps, &s).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn forward_noise_bounds() {
        let s = NoiseSchedule::default_linear();
        let x0 = vec![0.0];
        let eps = vec![0.0];
        assert!(forward_noise(&x0, 101, &eps, &s).is_err());
        assert!(forward_noise(&x0, 100, &eps, &s).is_ok());
    }

    #[test]
    fn forward_noise_matches_formula() {
        let s = NoiseSchedule::default_linear();
        let out = forward_noise(&[2.0], 50, &[1.0], &s).unwrap();
        let ab = s.alpha_bar(50);
        assert_relative_eq!(out[0], ab.sqrt() * 2.0 + (1.0 - ab).sqrt());
    }

    #[test]
    fn eps_score_round_trip() {
        let s = NoiseSchedule::default_linear();
        let eps = vec![0.3, -1.2, 4.5];
        for t in [1, 37, 100] {
            let score = eps_to_score(&eps, t, &s).unwrap();
            let back = score_to_eps(&score, t, &s).unwrap();
            for (a, b) in eps.iter().zip(&back) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn score_sign_opposes_eps() {
        let s = NoiseSchedule::default_linear();
        let score = eps_to_score(&[2.0], 10, &s).unwrap();
        assert!(score[0] < 0.0);
    }
}
