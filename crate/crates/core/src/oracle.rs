//! Closed-form Gaussian-mixture scores for a noised diffusion process.
//!
//! Diagonal-covariance mixtures stay Gaussian mixtures under the forward
//! noising map, so their time-t scores have an exact expression. That gives
//! an independent reference to test every guidance formula against: an
//! [`AnalyticDenoiser`] is a drop-in denoiser whose noise predictions are
//! exact, with no training in the loop.

use ndarray::Array2;
use rand::Rng;

use crate::denoiser::Denoiser;
use crate::error::{CoreError, Result};
use crate::schedule::{score_to_eps, NoiseSchedule};

/// Mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(CoreError::ShapeMismatch {
                what: "mixture components",
                expected: format!("{} means and variances", weights.len()),
                got: format!("{} means, {} variances", means.len(), variances.len()),
            });
        }
        let d = means[0].len();
        if d == 0 {
            return Err(CoreError::InvalidArgument(
                "mixture dimension must be positive".into(),
            ));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != d || v.len() != d {
                return Err(CoreError::ShapeMismatch {
                    what: "mixture components",
                    expected: format!("dim {d}"),
                    got: format!("dims {} and {}", m.len(), v.len()),
                });
            }
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(CoreError::InvalidArgument(
                    "variances must be positive and finite".into(),
                ));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(CoreError::InvalidArgument(
                "weights must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::InvalidArgument(format!(
                "weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single Gaussian as a one-component mixture.
    pub fn single(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    /// Isotropic single Gaussian.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::single(mean, vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn is_single(&self) -> bool {
        self.weights.len() == 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Draw n samples, one per row.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut k = self.weights.len() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            for j in 0..d {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                out[[i, j]] = self.means[k][j] + self.variances[k][j].sqrt() * z;
            }
        }
        out
    }
}

/// Score of the time-t noised mixture at x.
///
/// Noising sends component N(mu, sigma^2) to
/// N(sqrt(abar_t) mu, abar_t sigma^2 + 1 - abar_t), so the noised density
/// is again a mixture and its score is the responsibility-weighted sum of
/// component scores. t = 0 gives the score of the clean mixture.
pub fn noised_score(
    gm: &GaussianMixture,
    x: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let d = gm.dim();
    if x.len() != d {
        return Err(CoreError::ShapeMismatch {
            what: "noised_score",
            expected: format!("dim {d}"),
            got: format!("dim {}", x.len()),
        });
    }
    let ab = if t == 0 {
        1.0
    } else {
        schedule.check_step(t)?;
        schedule.alpha_bar(t)
    };
    let sqrt_ab = ab.sqrt();

    // Log responsibilities via log-sum-exp for stability far from all modes.
    let k = gm.num_components();
    let mut log_terms = Vec::with_capacity(k);
    for c in 0..k {
        let mut lp = gm.weights[c].ln();
        for j in 0..d {
            let m = sqrt_ab * gm.means[c][j];
            let s = ab * gm.variances[c][j] + (1.0 - ab);
            let r = x[j] - m;
            lp -= 0.5 * (r * r / s + s.ln() + (2.0 * std::f64::consts::PI).ln());
        }
        log_terms.push(lp);
    }
    let max_lt = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = log_terms.iter().map(|lt| (lt - max_lt).exp()).sum();

    let mut score = vec![0.0; d];
    for c in 0..k {
        let resp = (log_terms[c] - max_lt).exp() / denom;
        for j in 0..d {
            let m = sqrt_ab * gm.means[c][j];
            let s = ab * gm.variances[c][j] + (1.0 - ab);
            score[j] += resp * (m - x[j]) / s;
        }
    }
    Ok(score)
}

/// Geometric interpolation p^(1-lambda) q^lambda, renormalized.
///
/// Defined here for single Gaussians only, where the result is again
/// Gaussian: precisions mix linearly, and the mean is the precision-weighted
/// average. `lambda` outside [0, 1] extrapolates and is accepted as long as
/// every interpolated precision stays positive.
pub fn geometric_interpolate(
    p: &GaussianMixture,
    q: &GaussianMixture,
    lambda: f64,
) -> Result<GaussianMixture> {
    if !p.is_single() || !q.is_single() {
        return Err(CoreError::UnsupportedDistribution(
            "geometric interpolation is defined for single Gaussians only".into(),
        ));
    }
    if p.dim() != q.dim() {
        return Err(CoreError::ShapeMismatch {
            what: "geometric_interpolate",
            expected: format!("dim {}", p.dim()),
            got: format!("dim {}", q.dim()),
        });
    }
    if !lambda.is_finite() {
        return Err(CoreError::InvalidArgument("lambda must be finite".into()));
    }
    let d = p.dim();
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for j in 0..d {
        let prec_p = 1.0 / p.variances[0][j];
        let prec_q = 1.0 / q.variances[0][j];
        let prec = (1.0 - lambda) * prec_p + lambda * prec_q;
        if !(prec > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "interpolated precision is non-positive at lambda {lambda}"
            )));
        }
        var[j] = 1.0 / prec;
        mean[j] = var[j] * ((1.0 - lambda) * prec_p * p.means[0][j] + lambda * prec_q * q.means[0][j]);
    }
    GaussianMixture::single(mean, var)
}

/// Exact denoiser backed by closed-form mixture scores.
///
/// `uncond` is the distribution used when no caption is given; `cond`, when
/// present, is used for any conditional query (the toy setting has a single
/// caption, so all captions map to the same conditional law).
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    uncond: GaussianMixture,
    cond: Option<GaussianMixture>,
    schedule: NoiseSchedule,
}

impl AnalyticDenoiser {
    pub fn new(
        uncond: GaussianMixture,
        cond: Option<GaussianMixture>,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if let Some(c) = &cond {
            if c.dim() != uncond.dim() {
                return Err(CoreError::ShapeMismatch {
                    what: "analytic denoiser",
                    expected: format!("dim {}", uncond.dim()),
                    got: format!("dim {}", c.dim()),
                });
            }
        }
        Ok(Self {
            uncond,
            cond,
            schedule,
        })
    }

    /// Unconditional-only denoiser.
    pub fn unconditional(gm: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self {
            uncond: gm,
            cond: None,
            schedule,
        }
    }

    pub fn uncond_mixture(&self) -> &GaussianMixture {
        &self.uncond
    }

    pub fn cond_mixture(&self) -> Option<&GaussianMixture> {
        self.cond.as_ref()
    }
}

impl Denoiser for AnalyticDenoiser {
    fn dim(&self) -> usize {
        self.uncond.dim()
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, tokens: Option<&[usize]>) -> Result<Vec<f64>> {
        let gm = match (tokens, &self.cond) {
            (Some(_), Some(c)) => c,
            _ => &self.uncond,
        };
        let score = noised_score(gm, x_t, t, &self.schedule)?;
        score_to_eps(&score, t, &self.schedule)
    }
}
