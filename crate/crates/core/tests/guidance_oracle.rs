//! Analytic ground truth for the guidance algebra.
//!
//! Single equal-variance Gaussians are closed under both noising and
//! geometric interpolation, so the interpolated model's score is exactly
//! the linear mix of the endpoint scores at every noise level. That makes
//! the extrapolation identities checkable to float precision: guiding an
//! interpolated "fine-tuned" model with w = 1/lambda must reproduce the
//! target's own noise prediction.

use finextract_core::guidance::{model_guidance_eps, GuidanceConfig};
use finextract_core::oracle::{geometric_interpolate, noised_score, AnalyticDenoiser, GaussianMixture};
use finextract_core::sampler::ancestral_sample;
use finextract_core::schedule::{score_to_eps, NoiseSchedule};
use finextract_core::{make_guided_denoiser, Denoiser};

const DIM: usize = 3;

fn endpoints() -> (GaussianMixture, GaussianMixture) {
    let p = GaussianMixture::single(vec![1.5, -0.7, 0.3], vec![1.3; DIM]).unwrap();
    let q = GaussianMixture::single(vec![-2.0, 0.4, 1.1], vec![1.3; DIM]).unwrap();
    (p, q)
}

/// Deterministic probe points: x in a +/- 4 box, t over the whole schedule.
fn probes(schedule: &NoiseSchedule) -> Vec<(Vec<f64>, usize)> {
    let mut out = Vec::with_capacity(50);
    for i in 0..50u64 {
        let x: Vec<f64> = (0..DIM)
            .map(|j| 4.0 * (finextract_core::rng::standard_normal(0xABCD, i, 0, j as u64) / 3.0).clamp(-1.0, 1.0))
            .collect();
        let t = 1 + (finextract_core::rng::standard_normal(0xABCD, i, 1, 0).abs() * 31.0) as usize % schedule.num_steps();
        out.push((x, t));
    }
    out
}

#[test]
fn extrapolation_recovers_target_eps() {
    let schedule = NoiseSchedule::default_linear();
    let (p, q) = endpoints();
    let mut worst = 0.0f64;
    for lambda in [0.2, 0.5, 0.8] {
        let interp = geometric_interpolate(&p, &q, lambda).unwrap();
        let w = 1.0 / lambda;
        for (x, t) in probes(&schedule) {
            let eps_p = score_to_eps(&noised_score(&p, &x, t, &schedule).unwrap(), t, &schedule).unwrap();
            let eps_i = score_to_eps(&noised_score(&interp, &x, t, &schedule).unwrap(), t, &schedule).unwrap();
            let eps_q = score_to_eps(&noised_score(&q, &x, t, &schedule).unwrap(), t, &schedule).unwrap();
            let guided = model_guidance_eps(&eps_i, &eps_p, w).unwrap();
            for (g, e) in guided.iter().zip(&eps_q) {
                worst = worst.max((g - e).abs());
            }
        }
    }
    assert!(worst < 1e-8, "max abs eps error {worst}");
}

#[test]
fn interpolated_score_is_linear_mix() {
    let schedule = NoiseSchedule::default_linear();
    let (p, q) = endpoints();
    let mut worst = 0.0f64;
    for lambda in [0.2, 0.5, 0.8] {
        let interp = geometric_interpolate(&p, &q, lambda).unwrap();
        for (x, t) in probes(&schedule) {
            let si = noised_score(&interp, &x, t, &schedule).unwrap();
            let sp = noised_score(&p, &x, t, &schedule).unwrap();
            let sq = noised_score(&q, &x, t, &schedule).unwrap();
            for j in 0..DIM {
                let mix = (1.0 - lambda) * sp[j] + lambda * sq[j];
                worst = worst.max((si[j] - mix).abs());
            }
        }
    }
    assert!(worst < 1e-8, "max abs score error {worst}");
}

#[test]
fn score_linearity_needs_equal_variances() {
    // With unequal variances the precision average does not commute with
    // forward noising, so the linear-mix identity genuinely fails; this
    // pins the boundary of the oracle construction used above.
    let schedule = NoiseSchedule::default_linear();
    let p = GaussianMixture::single(vec![0.0], vec![1.0]).unwrap();
    let q = GaussianMixture::single(vec![0.0], vec![9.0]).unwrap();
    let lambda = 0.5;
    let interp = geometric_interpolate(&p, &q, lambda).unwrap();
    let x = vec![1.0];
    let t = 50;
    let si = noised_score(&interp, &x, t, &schedule).unwrap();
    let sp = noised_score(&p, &x, t, &schedule).unwrap();
    let sq = noised_score(&q, &x, t, &schedule).unwrap();
    let residual = (si[0] - ((1.0 - lambda) * sp[0] + lambda * sq[0])).abs();
    assert!(residual > 1e-3, "expected a real gap, got {residual}");
}

#[test]
fn sampler_level_reductions_are_bitwise() {
    // The guided sampler must collapse to its degenerate forms bit for bit:
    // noise is keyed by (seed, sample, step) only, so identical eps
    // predictions imply identical trajectories.
    let schedule = NoiseSchedule::default_linear();
    let uncond = GaussianMixture::single(vec![0.5, -0.5], vec![1.0, 1.0]).unwrap();
    let cond = GaussianMixture::single(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
    let pre = AnalyticDenoiser::unconditional(uncond.clone(), schedule.clone());
    let ft = AnalyticDenoiser::new(uncond, Some(cond), schedule.clone()).unwrap();
    let caption = vec![1usize];
    let seed = 99;
    let n = 8;

    let direct = make_guided_denoiser(&pre, &ft, GuidanceConfig::direct(Some(caption.clone()))).unwrap();
    let baseline = ancestral_sample(&direct, &schedule, n, Some(&caption), seed).unwrap();

    let fx = make_guided_denoiser(&pre, &ft, GuidanceConfig::finextract(1.0, 0.0, caption.clone())).unwrap();
    let fx_run = ancestral_sample(&fx, &schedule, n, Some(&caption), seed).unwrap();
    assert_eq!(baseline.points, fx_run.points);

    let cfg = make_guided_denoiser(&pre, &ft, GuidanceConfig::cfg(1.0, caption.clone())).unwrap();
    let cfg_run = ancestral_sample(&cfg, &schedule, n, Some(&caption), seed).unwrap();
    assert_eq!(baseline.points, cfg_run.points);

    // And the conditional direct run equals sampling the fine-tuned model
    // by itself, so "guided" adds nothing when all scales are neutral.
    let plain = ancestral_sample(&ft, &schedule, n, Some(&caption), seed).unwrap();
    assert_eq!(baseline.points, plain.points);
}
