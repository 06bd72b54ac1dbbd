//! Guidance algebra over noise predictions.
//!
//! Three combinators, all affine in the inputs:
//!
//! * model guidance: extrapolate between a pretrained and a fine-tuned
//!   denoiser to sharpen what fine-tuning changed,
//! * classifier-free guidance: extrapolate between conditional and
//!   unconditional outputs of one model,
//! * the FineXtract rule: both at once, anchored on the pretrained
//!   unconditional prediction, plus a small correction term scaled by k.
//!
//! [`make_guided_denoiser`] packages a combinator with its two models into
//! a pseudo-denoiser so the sampler never needs to know about guidance.

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Sample the fine-tuned model as-is (conditionally if a caption is set).
    Direct,
    /// Classifier-free guidance within the fine-tuned model.
    Cfg,
    /// Extrapolation from pretrained to fine-tuned, both unconditional.
    ModelGuidance,
    /// Fine-tuned conditional extrapolated against pretrained unconditional.
    FineXtract,
}

/// Full description of how to combine the model pair during sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    /// Unconditional extrapolation scale (model guidance).
    pub w: f64,
    /// Conditional extrapolation scale (CFG and FineXtract).
    pub w_prime: f64,
    /// Correction scale; the reference default is -0.02 and negative
    /// values are deliberately allowed.
    pub k: f64,
    /// Caption tokens for the conditional modes.
    #[serde(rename = "caption_tokens")]
    pub caption: Option<Vec<usize>>,
}

impl GuidanceConfig {
    pub fn direct(caption: Option<Vec<usize>>) -> Self {
        Self {
            mode: GuidanceMode::Direct,
            w: 1.0,
            w_prime: 1.0,
            k: 0.0,
            caption,
        }
    }

    pub fn cfg(w_prime: f64, caption: Vec<usize>) -> Self {
        Self {
            mode: GuidanceMode::Cfg,
            w: 1.0,
            w_prime,
            k: 0.0,
            caption: Some(caption),
        }
    }

    pub fn model_guidance(w: f64) -> Self {
        Self {
            mode: GuidanceMode::ModelGuidance,
            w,
            w_prime: 1.0,
            k: 0.0,
            caption: None,
        }
    }

    pub fn finextract(w_prime: f64, k: f64, caption: Vec<usize>) -> Self {
        Self {
            mode: GuidanceMode::FineXtract,
            w: 1.0,
            w_prime,
            k,
            caption: Some(caption),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w_prime.is_finite() && self.k.is_finite()) {
            return Err(CoreError::Config(
                "guidance scales must be finite".into(),
            ));
        }
        if self.w < 1.0 || self.w_prime < 1.0 {
            return Err(CoreError::Config(format!(
                "guidance scales must be >= 1, got w {} w' {}",
                self.w, self.w_prime
            )));
        }
        match self.mode {
            GuidanceMode::Cfg | GuidanceMode::FineXtract if self.caption.is_none() => {
                Err(CoreError::Config(format!(
                    "{:?} mode requires a caption",
                    self.mode
                )))
            }
            _ => Ok(()),
        }
    }

    /// Short tag for provenance strings and report rows.
    pub fn describe(&self) -> String {
        match self.mode {
            GuidanceMode::Direct => "direct".to_string(),
            GuidanceMode::Cfg => format!("cfg(w'={})", self.w_prime),
            GuidanceMode::ModelGuidance => format!("model_guidance(w={})", self.w),
            GuidanceMode::FineXtract => {
                format!("finextract(w'={}, k={})", self.w_prime, self.k)
            }
        }
    }
}

fn check_dims(a: &[f64], b: &[f64], what: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::ShapeMismatch {
            what,
            expected: format!("dim {}", a.len()),
            got: format!("dim {}", b.len()),
        });
    }
    Ok(())
}

/// eps_ft + (w - 1) * (eps_ft - eps_pre).
pub fn model_guidance_eps(eps_ft: &[f64], eps_pre: &[f64], w: f64) -> Result<Vec<f64>> {
    check_dims(eps_ft, eps_pre, "model_guidance_eps")?;
    Ok(eps_ft
        .iter()
        .zip(eps_pre)
        .map(|(f, p)| f + (w - 1.0) * (f - p))
        .collect())
}

/// eps_cond + (w' - 1) * (eps_cond - eps_uncond).
pub fn cfg_eps(eps_cond: &[f64], eps_uncond: &[f64], w_prime: f64) -> Result<Vec<f64>> {
    check_dims(eps_cond, eps_uncond, "cfg_eps")?;
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(c, u)| c + (w_prime - 1.0) * (c - u))
        .collect())
}

/// eps_ft_cond + (w' - 1) * (eps_ft_cond - eps_pre_uncond) + k * eps_pre_uncond.
pub fn finextract_eps(
    eps_ft_cond: &[f64],
    eps_pre_uncond: &[f64],
    w_prime: f64,
    k: f64,
) -> Result<Vec<f64>> {
    check_dims(eps_ft_cond, eps_pre_uncond, "finextract_eps")?;
    Ok(eps_ft_cond
        .iter()
        .zip(eps_pre_uncond)
        .map(|(c, u)| c + (w_prime - 1.0) * (c - u) + k * u)
        .collect())
}

/// Pseudo-denoiser that applies the configured combinator at every step.
pub struct GuidedDenoiser<'a> {
    pre: &'a dyn Denoiser,
    ft: &'a dyn Denoiser,
    cfg: GuidanceConfig,
}

impl<'a> GuidedDenoiser<'a> {
    pub fn config(&self) -> &GuidanceConfig {
        &self.cfg
    }
}

/// Compose a pretrained and a fine-tuned denoiser under a guidance config.
pub fn make_guided_denoiser<'a>(
    pre: &'a dyn Denoiser,
    ft: &'a dyn Denoiser,
    cfg: GuidanceConfig,
) -> Result<GuidedDenoiser<'a>> {
    cfg.validate()?;
    if pre.dim() != ft.dim() {
        return Err(CoreError::ShapeMismatch {
            what: "guided denoiser models",
            expected: format!("dim {}", pre.dim()),
            got: format!("dim {}", ft.dim()),
        });
    }
    Ok(GuidedDenoiser { pre, ft, cfg })
}

impl Denoiser for GuidedDenoiser<'_> {
    fn dim(&self) -> usize {
        self.ft.dim()
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, tokens: Option<&[usize]>) -> Result<Vec<f64>> {
        // The composition carries its own caption; a caller-supplied token
        // sequence would be ambiguous, so the config wins.
        let caption = self.cfg.caption.as_deref().or(tokens);
        match self.cfg.mode {
            GuidanceMode::Direct => self.ft.predict_eps(x_t, t, caption),
            GuidanceMode::Cfg => {
                let cond = self.ft.predict_eps(x_t, t, caption)?;
                let uncond = self.ft.predict_eps(x_t, t, None)?;
                cfg_eps(&cond, &uncond, self.cfg.w_prime)
            }
            GuidanceMode::ModelGuidance => {
                let ft = self.ft.predict_eps(x_t, t, None)?;
                let pre = self.pre.predict_eps(x_t, t, None)?;
                model_guidance_eps(&ft, &pre, self.cfg.w)
            }
            GuidanceMode::FineXtract => {
                let cond = self.ft.predict_eps(x_t, t, caption)?;
                let uncond = self.pre.predict_eps(x_t, t, None)?;
                finextract_eps(&cond, &uncond, self.cfg.w_prime, self.cfg.k)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{AnalyticDenoiser, GaussianMixture};
    use crate::schedule::NoiseSchedule;
    use approx::assert_relative_eq;

    #[test]
    fn model_guidance_degenerate_cases() {
        let ft = vec![1.0, -2.0];
        let pre = vec![0.5, 0.5];
        let out = model_guidance_eps(&ft, &pre, 1.0).unwrap();
        assert_eq!(out, ft);
        let same = model_guidance_eps(&ft, &ft, 7.3).unwrap();
        assert_eq!(same, ft);
    }

    #[test]
    fn cfg_degenerate_cases() {
        let c = vec![0.2, 0.4];
        let u = vec![-1.0, 1.0];
        assert_eq!(cfg_eps(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_eps(&c, &c, 5.0).unwrap(), c);
    }

    #[test]
    fn finextract_reduces_to_model_guidance_at_k0() {
        let c = vec![0.3, -0.8, 2.0];
        let u = vec![1.1, 0.0, -0.5];
        for w in [1.0, 2.0, 3.5] {
            let a = finextract_eps(&c, &u, w, 0.0).unwrap();
            let b = model_guidance_eps(&c, &u, w).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(finextract_eps(&c, &u, 1.0, 0.0).unwrap(), c);
    }

    #[test]
    fn finextract_correction_term() {
        let c = vec![1.0];
        let u = vec![2.0];
        let out = finextract_eps(&c, &u, 3.0, -0.02).unwrap();
        assert_relative_eq!(out[0], 1.0 + 2.0 * (1.0 - 2.0) + (-0.02) * 2.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(model_guidance_eps(&[1.0], &[1.0, 2.0], 2.0).is_err());
        assert!(cfg_eps(&[1.0], &[1.0, 2.0], 2.0).is_err());
        assert!(finextract_eps(&[1.0], &[1.0, 2.0], 2.0, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = GuidanceConfig::cfg(2.0, vec![1]);
        cfg.caption = None;
        assert!(cfg.validate().is_err());
        let mut fx = GuidanceConfig::finextract(3.0, -0.02, vec![1]);
        assert!(fx.validate().is_ok());
        fx.caption = None;
        assert!(fx.validate().is_err());
        let mg = GuidanceConfig::model_guidance(2.0);
        assert!(mg.validate().is_ok());
        let mut bad = GuidanceConfig::direct(None);
        bad.w_prime = f64::NAN;
        assert!(bad.validate().is_err());
        bad.w_prime = 0.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn guided_dispatch_matches_combinators() {
        let s = NoiseSchedule::default_linear();
        let pre_mix = GaussianMixture::single(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let ft_uncond = GaussianMixture::single(vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let ft_cond = GaussianMixture::single(vec![-1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let pre = AnalyticDenoiser::unconditional(pre_mix, s.clone());
        let ft = AnalyticDenoiser::new(ft_uncond, Some(ft_cond), s.clone()).unwrap();

        let x = vec![0.7, -0.3];
        let t = 42;
        let e_pre = pre.predict_eps(&x, t, None).unwrap();
        let e_ftu = ft.predict_eps(&x, t, None).unwrap();
        let e_ftc = ft.predict_eps(&x, t, Some(&[1])).unwrap();

        let g = make_guided_denoiser(&pre, &ft, GuidanceConfig::cfg(2.5, vec![1])).unwrap();
        assert_eq!(
            g.predict_eps(&x, t, None).unwrap(),
            cfg_eps(&e_ftc, &e_ftu, 2.5).unwrap()
        );

        let g = make_guided_denoiser(&pre, &ft, GuidanceConfig::model_guidance(2.0)).unwrap();
        assert_eq!(
            g.predict_eps(&x, t, None).unwrap(),
            model_guidance_eps(&e_ftu, &e_pre, 2.0).unwrap()
        );

        let g =
            make_guided_denoiser(&pre, &ft, GuidanceConfig::finextract(3.0, -0.02, vec![1]))
                .unwrap();
        assert_eq!(
            g.predict_eps(&x, t, None).unwrap(),
            finextract_eps(&e_ftc, &e_pre, 3.0, -0.02).unwrap()
        );

        let g = make_guided_denoiser(&pre, &ft, GuidanceConfig::direct(Some(vec![1]))).unwrap();
        assert_eq!(g.predict_eps(&x, t, None).unwrap(), e_ftc);
    }

    #[test]
    fn serialization_field_names() {
        let cfg = GuidanceConfig::finextract(3.0, -0.02, vec![0, 2]);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"caption_tokens\""), "{json}");
        assert!(json.contains("\"w_prime\""), "{json}");
        let back: GuidanceConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.caption, Some(vec![0, 2]));
    }
}
