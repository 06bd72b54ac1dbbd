//! Synthetic token vocabulary for toy captions.
//!
//! A stand-in for a text encoder: V tokens, each with a fixed L2-normalized
//! embedding. Captions are short sequences (1 to 4 tokens) encoded by the
//! mean of their token embeddings. Token 0 is reserved as the null token
//! and encodes the empty prompt for unconditional prediction.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MAX_CAPTION_LEN: usize = 4;

/// Recipe for regenerating a vocabulary deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub size: usize,
    pub emb_dim: usize,
    pub seed: u64,
}

/// Fixed table of unit-norm token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocabulary {
    emb: Array2<f64>,
    null_index: usize,
}

impl TokenVocabulary {
    /// Generate `size` unit-norm embeddings of dimension `emb_dim`.
    pub fn generate(spec: &VocabSpec) -> Result<Self> {
        if spec.size < 2 || spec.emb_dim == 0 {
            return Err(CoreError::InvalidArgument(
                "vocabulary needs >= 2 tokens and positive embedding dim".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut emb = Array2::<f64>::zeros((spec.size, spec.emb_dim));
        for i in 0..spec.size {
            loop {
                for j in 0..spec.emb_dim {
                    emb[[i, j]] = rng.sample(rand_distr::StandardNormal);
                }
                let norm = emb.row(i).dot(&emb.row(i)).sqrt();
                // A zero draw is astronomically unlikely; loop anyway so the
                // unit-norm invariant is unconditional.
                if norm > 1e-12 {
                    for j in 0..spec.emb_dim {
                        emb[[i, j]] /= norm;
                    }
                    break;
                }
            }
        }
        let v = Self { emb, null_index: 0 };
        v.validate()?;
        Ok(v)
    }

    /// Construct from an explicit table (rows must be unit-norm).
    pub fn from_table(emb: Array2<f64>, null_index: usize) -> Result<Self> {
        if null_index >= emb.nrows() {
            return Err(CoreError::InvalidArgument(format!(
                "null index {null_index} out of range for {} tokens",
                emb.nrows()
            )));
        }
        let v = Self { emb, null_index };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.emb.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(CoreError::InvalidArgument(format!(
                    "embedding row {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.emb.nrows()
    }

    pub fn emb_dim(&self) -> usize {
        self.emb.ncols()
    }

    pub fn null_index(&self) -> usize {
        self.null_index
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.emb
    }

    pub fn embedding(&self, token: usize) -> Result<Array1<f64>> {
        if token >= self.size() {
            return Err(CoreError::InvalidArgument(format!(
                "token {token} out of range for vocabulary of {}",
                self.size()
            )));
        }
        Ok(self.emb.row(token).to_owned())
    }

    /// Per-position embeddings of a caption, one row per token.
    pub fn embed(&self, tokens: &[usize]) -> Result<Array2<f64>> {
        self.check_caption(tokens)?;
        let mut out = Array2::zeros((tokens.len(), self.emb_dim()));
        for (i, &tok) in tokens.iter().enumerate() {
            out.row_mut(i).assign(&self.emb.row(tok));
        }
        Ok(out)
    }

    /// Mean-pooled caption embedding; `None` encodes via the null token.
    pub fn pooled(&self, tokens: Option<&[usize]>) -> Result<Array1<f64>> {
        match tokens {
            None => Ok(self.emb.row(self.null_index).to_owned()),
            Some(toks) => {
                self.check_caption(toks)?;
                let mut acc = Array1::zeros(self.emb_dim());
                for &tok in toks {
                    acc += &self.emb.row(tok);
                }
                Ok(acc / toks.len() as f64)
            }
        }
    }

    fn check_caption(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > MAX_CAPTION_LEN {
            return Err(CoreError::InvalidArgument(format!(
                "captions have 1..={} tokens, got {}",
                MAX_CAPTION_LEN,
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.size()) {
            return Err(CoreError::InvalidArgument(format!(
                "token {bad} out of range for vocabulary of {}",
                self.size()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> VocabSpec {
        VocabSpec {
            size: 64,
            emb_dim: 8,
            seed: 42,
        }
    }

    #[test]
    fn rows_are_unit_norm() {
        let v = TokenVocabulary::generate(&spec()).unwrap();
        assert_eq!(v.size(), 64);
        for row in v.table().rows() {
            assert_relative_eq!(row.dot(&row).sqrt(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = TokenVocabulary::generate(&spec()).unwrap();
        let b = TokenVocabulary::generate(&spec()).unwrap();
        assert_eq!(a, b);
        let other = TokenVocabulary::generate(&VocabSpec { seed: 43, ..spec() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn pooled_matches_mean() {
        let v = TokenVocabulary::generate(&spec()).unwrap();
        let e = v.pooled(Some(&[3, 5])).unwrap();
        let want = (v.embedding(3).unwrap() + v.embedding(5).unwrap()) / 2.0;
        for (a, b) in e.iter().zip(want.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn none_uses_null_token() {
        let v = TokenVocabulary::generate(&spec()).unwrap();
        let none = v.pooled(None).unwrap();
        let null = v.pooled(Some(&[0])).unwrap();
        assert_eq!(none, null);
    }

    #[test]
    fn caption_length_bounds() {
        let v = TokenVocabulary::generate(&spec()).unwrap();
        assert!(v.pooled(Some(&[])).is_err());
        assert!(v.pooled(Some(&[1, 2, 3, 4, 5])).is_err());
        assert!(v.pooled(Some(&[1, 2, 3, 4])).is_ok());
        assert!(v.pooled(Some(&[999])).is_err());
    }

    #[test]
    fn from_table_validates_norms() {
        let bad = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        assert!(TokenVocabulary::from_table(bad, 0).is_err());
        let good = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(TokenVocabulary::from_table(good, 0).is_ok());
    }
}
