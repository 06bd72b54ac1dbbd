//! The denoiser interface shared by analytic oracles and learned models.

use ndarray::Array2;

use crate::error::Result;

/// Anything that predicts the noise eps added to a clean point.
///
/// `tokens` is an optional caption (token indices); `None` means
/// unconditional. Implementations that ignore conditioning simply
/// disregard the argument.
pub trait Denoiser {
    /// Data dimensionality d.
    fn dim(&self) -> usize;

    /// Predicted noise for x_t at timestep t (1..=T).
    fn predict_eps(&self, x_t: &[f64], t: usize, tokens: Option<&[usize]>) -> Result<Vec<f64>>;
}

/// A batch of generated samples plus the seed that produced them.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// N x d matrix, one sample per row.
    pub points: Array2<f64>,
    /// Seed used for all stochastic draws during generation.
    pub seed: u64,
    /// Human-readable description of how the batch was produced.
    pub provenance: String,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}
