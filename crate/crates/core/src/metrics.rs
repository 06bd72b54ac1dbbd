//! Similarity functions and the two evaluation metrics.
//!
//! Similarities are pluggable and shared by the clustering graph and the
//! metrics, so swapping in a different feature extractor touches nothing
//! downstream. Built-ins: rescaled cosine on raw vectors, cosine on a
//! fixed random projection of the vectors, and a Gaussian kernel on
//! Euclidean distance for data where position rather than direction is
//! what an extraction must reproduce.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::rng;

/// Cosine similarity in its native [-1, 1] range.
///
/// Conventions for degenerate inputs: two zero vectors are identical (1);
/// a zero vector against a nonzero one is maximally dissimilar (-1).
pub fn raw_cosine(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 && ny == 0.0 {
        return 1.0;
    }
    if nx == 0.0 || ny == 0.0 {
        return -1.0;
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / (nx * ny)).clamp(-1.0, 1.0)
}

/// A named similarity function with range [0, 1].
#[derive(Clone)]
pub struct SimilarityFn {
    name: String,
    f: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for SimilarityFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SimilarityFn({})", self.name)
    }
}

/// Dimension of the random-projection feature space.
const PROJECTION_DIM: usize = 8;
/// Fixed stream for the projection matrix; part of the function's identity.
const PROJECTION_SEED: u64 = 0x51_3d_5eed;

fn project(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; PROJECTION_DIM];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, &v) in x.iter().enumerate() {
            // Entry (i, j) of the projection matrix for input dimension d,
            // a pure function of the fixed seed.
            *o += v * rng::standard_normal(PROJECTION_SEED, d as u64, i as u64, j as u64);
        }
    }
    out
}

impl SimilarityFn {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// Cosine similarity affinely rescaled from [-1, 1] to [0, 1].
    pub fn cosine01() -> Self {
        Self::new("cosine", |x, y| (raw_cosine(x, y) + 1.0) / 2.0)
    }

    /// Rescaled cosine over a fixed Gaussian random projection.
    pub fn random_projection() -> Self {
        Self::new("random_projection", |x, y| {
            (raw_cosine(&project(x), &project(y)) + 1.0) / 2.0
        })
    }

    /// Gaussian kernel exp(-|x - y|^2 / 2), unit bandwidth. Unlike the
    /// cosine family this decays with distance, so a random vector scores
    /// near zero against any fixed reference instead of a constant.
    pub fn rbf() -> Self {
        Self::new("rbf", |x, y| {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / 2.0).exp()
        })
    }

    /// Registry lookup for config files.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cosine" => Ok(Self::cosine01()),
            "random_projection" => Ok(Self::random_projection()),
            "rbf" => Ok(Self::rbf()),
            other => Err(CoreError::Config(format!(
                "unknown similarity function '{other}' (have: cosine, random_projection, rbf)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.f)(x, y)
    }
}

/// Best match per training row: (index into X_hat, similarity).
fn best_matches(x0: &Array2<f64>, x_hat: &Array2<f64>, sim: &SimilarityFn) -> Result<Vec<(usize, f64)>> {
    if x0.nrows() == 0 || x_hat.nrows() == 0 {
        return Err(CoreError::InvalidArgument(
            "metric inputs must be non-empty".into(),
        ));
    }
    if x0.ncols() != x_hat.ncols() {
        return Err(CoreError::ShapeMismatch {
            what: "metric inputs",
            expected: format!("dim {}", x0.ncols()),
            got: format!("dim {}", x_hat.ncols()),
        });
    }
    let mut out = Vec::with_capacity(x0.nrows());
    for (i, xi) in x0.rows().into_iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, xj) in x_hat.rows().into_iter().enumerate() {
            let s = sim.eval(xi.as_slice().unwrap(), xj.as_slice().unwrap());
            if !s.is_finite() {
                return Err(CoreError::NumericFailure {
                    context: format!("similarity of rows ({i}, {j})"),
                });
            }
            if s > best.1 {
                best = (j, s);
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Mean over training rows of the best similarity to any extracted row.
pub fn average_similarity(
    x0: &Array2<f64>,
    x_hat: &Array2<f64>,
    sim: &SimilarityFn,
) -> Result<f64> {
    let best = best_matches(x0, x_hat, sim)?;
    Ok(best.iter().map(|(_, s)| s).sum::<f64>() / best.len() as f64)
}

/// Fraction of training rows whose best match is strictly above tau.
pub fn a_esr(x0: &Array2<f64>, x_hat: &Array2<f64>, sim: &SimilarityFn, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CoreError::InvalidArgument(format!(
            "tau must be in (0, 1), got {tau}"
        )));
    }
    let best = best_matches(x0, x_hat, sim)?;
    let hits = best.iter().filter(|(_, s)| *s > tau).count();
    Ok(hits as f64 / best.len() as f64)
}

/// Both metrics plus per-training-row best matches.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub avg_similarity: f64,
    /// (tau, success rate) per configured threshold.
    pub esr: Vec<(f64, f64)>,
    /// Per training row: (best extracted index, best similarity).
    pub best: Vec<(usize, f64)>,
}

pub fn metric_report(
    x0: &Array2<f64>,
    x_hat: &Array2<f64>,
    sim: &SimilarityFn,
    taus: &[f64],
) -> Result<MetricReport> {
    let best = best_matches(x0, x_hat, sim)?;
    let avg = best.iter().map(|(_, s)| s).sum::<f64>() / best.len() as f64;
    let mut esr = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "tau must be in (0, 1), got {tau}"
            )));
        }
        let hits = best.iter().filter(|(_, s)| *s > tau).count();
        esr.push((tau, hits as f64 / best.len() as f64));
    }
    Ok(MetricReport {
        avg_similarity: avg,
        esr,
        best,
    })
}
