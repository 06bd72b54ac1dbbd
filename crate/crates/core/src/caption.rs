//! Caption recovery from fine-tuning weight deltas.
//!
//! Fine-tuning with a fixed caption pushes the condition-facing weight
//! matrix along the caption's embedding directions. Reading those
//! directions back out gives the training caption: a row-space argmax for
//! single tokens, principal directions of the stacked weights for the
//! general case, and a projected-gradient loop over the embedding space
//! for hard prompts.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::mlp::MLPDenoiser;
use crate::vocab::TokenVocabulary;

/// One condition-facing dense layer before and after fine-tuning.
#[derive(Debug, Clone)]
pub struct LinearLayerPair {
    pub beta_minus: Array2<f64>,
    pub beta_plus: Array2<f64>,
}

impl LinearLayerPair {
    pub fn new(beta_minus: Array2<f64>, beta_plus: Array2<f64>) -> Result<Self> {
        if beta_minus.dim() != beta_plus.dim() {
            return Err(CoreError::ShapeMismatch {
                what: "layer pair",
                expected: format!("{:?}", beta_minus.dim()),
                got: format!("{:?}", beta_plus.dim()),
            });
        }
        for m in [&beta_minus, &beta_plus] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NumericFailure {
                    context: "layer pair entries".into(),
                });
            }
        }
        Ok(Self {
            beta_minus,
            beta_plus,
        })
    }

    pub fn delta(&self) -> Array2<f64> {
        &self.beta_plus - &self.beta_minus
    }
}

/// Pull (pretrained, fine-tuned) weight pairs out of two models.
///
/// `selector` names dense layers ("wc" is the condition-facing one; "w1",
/// "w2", "w3" are also addressable); pairs come back in selector order.
pub fn export_layer_pair(
    pre: &MLPDenoiser,
    post: &MLPDenoiser,
    selector: &[&str],
) -> Result<Vec<LinearLayerPair>> {
    if pre.arch() != post.arch() {
        return Err(CoreError::ShapeMismatch {
            what: "model pair architectures",
            expected: format!("{:?}", pre.arch()),
            got: format!("{:?}", post.arch()),
        });
    }
    if selector.is_empty() {
        return Err(CoreError::InvalidArgument(
            "layer selector must name at least one layer".into(),
        ));
    }
    let mut out = Vec::with_capacity(selector.len());
    for name in selector {
        let (a, b) = match (pre.layer_matrix(name), post.layer_matrix(name)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(CoreError::ShapeMismatch {
                    what: "layer selector",
                    expected: "one of w1, wc, w2, w3".into(),
                    got: (*name).to_string(),
                })
            }
        };
        out.push(LinearLayerPair::new(a.clone(), b.clone())?);
    }
    Ok(out)
}

/// A prompt as per-position embedding rows.
#[derive(Debug, Clone)]
pub struct PromptEmbedding {
    rows: Array2<f64>,
    normalized: bool,
}

impl PromptEmbedding {
    pub fn new(rows: Array2<f64>, normalized: bool) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(CoreError::InvalidArgument(
                "prompt embedding needs at least one position".into(),
            ));
        }
        if normalized {
            for (i, row) in rows.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(CoreError::InvalidArgument(format!(
                        "prompt row {i} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { rows, normalized })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn width(&self) -> usize {
        self.rows.nrows()
    }
}

/// Single-token recovery: the vocabulary entry whose embedding the summed
/// weight deltas stretch the most. Ties go to the lowest index.
pub fn rowspace_argmax_single(
    pairs: &[LinearLayerPair],
    vocab: &TokenVocabulary,
) -> Result<usize> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument("no layer pairs given".into()));
    }
    let deltas: Vec<Array2<f64>> = pairs.iter().map(LinearLayerPair::delta).collect();
    if deltas
        .iter()
        .all(|d| d.iter().all(|&x| x == 0.0))
    {
        return Err(CoreError::DegenerateDelta(
            "all weight deltas are zero".into(),
        ));
    }
    for d in &deltas {
        if d.ncols() != vocab.emb_dim() {
            return Err(CoreError::ShapeMismatch {
                what: "delta columns vs embedding dim",
                expected: format!("{}", vocab.emb_dim()),
                got: format!("{}", d.ncols()),
            });
        }
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..vocab.size() {
        let e = vocab.embedding(i)?;
        let score: f64 = deltas
            .iter()
            .map(|d| {
                let v = d.dot(&e);
                v.dot(&v)
            })
            .sum();
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

// Deterministic start vector for power iteration.
const PCA_START_SEED: u64 = 0x9c_a0_17e5;

fn power_iterate(g: &Array2<f64>, start_lane: u64, iters: usize, tol: Option<f64>) -> (Array1<f64>, f64, bool) {
    let n = g.nrows();
    let mut v: Array1<f64> = (0..n)
        .map(|j| crate::rng::standard_normal(PCA_START_SEED, start_lane, 0, j as u64))
        .collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut converged = false;
    for _ in 0..iters {
        let mut next = g.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm < 1e-300 {
            // v fell into the null space; caller falls back.
            return (v, 0.0, false);
        }
        next /= norm;
        if next.dot(&v) < 0.0 {
            next = -next;
        }
        let diff = (&next - &v).dot(&(&next - &v)).sqrt();
        v = next;
        if let Some(tol) = tol {
            if diff < tol {
                converged = true;
                break;
            }
        }
    }
    let lambda = v.dot(&g.dot(&v));
    (v, lambda, converged)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix; returns the
/// eigenvector of the largest eigenvalue (lowest column index on ties).
fn jacobi_top_eigvec(g: &Array2<f64>) -> Array1<f64> {
    let n = g.nrows();
    let mut a = g.clone();
    let mut vecs = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[[p, q]] * a[[p, q]])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vecs[[k, p]];
                    let vkq = vecs[[k, q]];
                    vecs[[k, p]] = c * vkp - s * vkq;
                    vecs[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..n {
        if a[[j, j]] > best.1 {
            best = (j, a[[j, j]]);
        }
    }
    vecs.column(best.0).to_owned()
}

fn fix_sign(mut v: Array1<f64>) -> Array1<f64> {
    let mut idx = 0;
    let mut mag = -1.0;
    for (j, &x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            idx = j;
        }
    }
    if v[idx] < 0.0 {
        v = -v;
    }
    v
}

/// Top right-singular direction of a stacked matrix (rows are
/// observations). Power iteration on the Gram matrix, with a dense Jacobi
/// decomposition as fallback when the spectral gap is below 1e-6 or the
/// iteration fails to converge. Sign convention: the entry of largest
/// magnitude is positive.
pub fn principal_direction(stack: &Array2<f64>) -> Result<Array1<f64>> {
    if stack.nrows() == 0 || stack.ncols() == 0 {
        return Err(CoreError::InvalidArgument("empty matrix stack".into()));
    }
    let fro: f64 = stack.iter().map(|x| x * x).sum();
    if fro == 0.0 {
        return Err(CoreError::DegenerateDelta("zero matrix stack".into()));
    }
    let g = stack.t().dot(stack);
    let (v, lambda1, converged) = power_iterate(&g, 0, 500, Some(1e-10));
    if converged && lambda1 > 0.0 {
        // Deflate and estimate the runner-up to judge the gap.
        let mut g2 = g.clone();
        for i in 0..g2.nrows() {
            for j in 0..g2.ncols() {
                g2[[i, j]] -= lambda1 * v[i] * v[j];
            }
        }
        let (_, lambda2, _) = power_iterate(&g2, 1, 100, None);
        if (lambda1 - lambda2) / lambda1 >= 1e-6 {
            return Ok(fix_sign(v));
        }
    }
    Ok(fix_sign(jacobi_top_eigvec(&g)))
}

/// Which stacks feed the objective direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveVariant {
    /// Difference of per-side principal directions (the reference form).
    #[default]
    PcaDifference,
    /// Principal direction of the stacked deltas, for comparison.
    DeltaPca,
}

/// The direction the recovery objective projects embeddings onto.
#[derive(Debug, Clone)]
pub struct ExtractionObjective {
    m: Array1<f64>,
}

impl ExtractionObjective {
    pub fn direction(&self) -> &Array1<f64> {
        &self.m
    }

    /// F(e) = |<m, e>| and its gradient sign(<m, e>) * m.
    /// At <m, e> = 0 the gradient is defined as zero.
    pub fn value_and_grad(&self, e: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
        if e.len() != self.m.len() {
            return Err(CoreError::ShapeMismatch {
                what: "objective input",
                expected: format!("dim {}", self.m.len()),
                got: format!("dim {}", e.len()),
            });
        }
        let inner = self.m.dot(e);
        let f = inner.abs();
        let grad = if inner == 0.0 {
            Array1::zeros(self.m.len())
        } else {
            &self.m * inner.signum()
        };
        Ok((f, grad))
    }
}

/// Build the objective from layer pairs by stacking each side's rows.
pub fn build_objective(
    pairs: &[LinearLayerPair],
    variant: ObjectiveVariant,
) -> Result<ExtractionObjective> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument("no layer pairs given".into()));
    }
    let cols = pairs[0].beta_plus.ncols();
    for p in pairs {
        if p.beta_plus.ncols() != cols {
            return Err(CoreError::ShapeMismatch {
                what: "layer pair columns",
                expected: format!("{cols}"),
                got: format!("{}", p.beta_plus.ncols()),
            });
        }
    }
    let stack_of = |take: &dyn Fn(&LinearLayerPair) -> Array2<f64>| -> Array2<f64> {
        let total_rows: usize = pairs.iter().map(|p| p.beta_plus.nrows()).sum();
        let mut out = Array2::zeros((total_rows, cols));
        let mut at = 0;
        for p in pairs {
            let m = take(p);
            out.slice_mut(ndarray::s![at..at + m.nrows(), ..]).assign(&m);
            at += m.nrows();
        }
        out
    };
    let m = match variant {
        ObjectiveVariant::PcaDifference => {
            let plus = principal_direction(&stack_of(&|p| p.beta_plus.clone()))?;
            let minus = principal_direction(&stack_of(&|p| p.beta_minus.clone()))?;
            plus - minus
        }
        ObjectiveVariant::DeltaPca => principal_direction(&stack_of(&LinearLayerPair::delta))?,
    };
    Ok(ExtractionObjective { m })
}

/// F(e) for one embedding row, plus its analytic gradient.
pub fn objective_f(
    pairs: &[LinearLayerPair],
    e: &Array1<f64>,
    variant: ObjectiveVariant,
) -> Result<(f64, Array1<f64>)> {
    build_objective(pairs, variant)?.value_and_grad(e)
}

/// Nearest vocabulary token per row (by cosine; rows of zero norm map to
/// token 0 by convention, ties to the lowest index). Returns the token
/// sequence and its embedding.
pub fn project_to_vocab(
    e_hat: &Array2<f64>,
    vocab: &TokenVocabulary,
) -> Result<(Vec<usize>, PromptEmbedding)> {
    if e_hat.ncols() != vocab.emb_dim() {
        return Err(CoreError::ShapeMismatch {
            what: "prompt embedding dim",
            expected: format!("{}", vocab.emb_dim()),
            got: format!("{}", e_hat.ncols()),
        });
    }
    if e_hat.nrows() == 0 {
        return Err(CoreError::InvalidArgument(
            "prompt embedding needs at least one position".into(),
        ));
    }
    let mut tokens = Vec::with_capacity(e_hat.nrows());
    for row in e_hat.rows() {
        // Vocab rows are unit-norm, so the cosine argmax is the dot argmax;
        // a zero row keeps the initial index 0.
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..vocab.size() {
            let dot = vocab.table().row(i).dot(&row);
            if dot > best.1 {
                best = (i, dot);
            }
        }
        let norm = row.dot(&row).sqrt();
        tokens.push(if norm == 0.0 { 0 } else { best.0 });
    }
    let mut rows = Array2::zeros((tokens.len(), vocab.emb_dim()));
    for (i, &t) in tokens.iter().enumerate() {
        rows.row_mut(i).assign(&vocab.table().row(t));
    }
    Ok((tokens, PromptEmbedding::new(rows, true)?))
}

/// Output of the hard-prompt loop.
#[derive(Debug, Clone)]
pub struct HardPromptResult {
    pub tokens: Vec<usize>,
    /// Objective value at the projected prompt, one entry per iteration.
    pub trajectory: Vec<f64>,
}

/// Projected-gradient caption recovery.
///
/// Initializes the prompt embedding from `width` random vocabulary tokens,
/// then repeats: project to the nearest tokens, take the objective
/// gradient at the projected embedding, and step the free embedding along
/// the normalized gradient. The returned tokens are the final projection.
/// `lr == 0` degenerates to projecting the initialization. Deterministic
/// given the seed.
pub fn hard_prompt_extract(
    pairs: &[LinearLayerPair],
    vocab: &TokenVocabulary,
    width: usize,
    iters: usize,
    lr: f64,
    seed: u64,
) -> Result<HardPromptResult> {
    if iters < 1 {
        return Err(CoreError::InvalidArgument(
            "hard prompt extraction needs at least one iteration".into(),
        ));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "learning rate must be finite and non-negative".into(),
        ));
    }
    if width == 0 || width > crate::vocab::MAX_CAPTION_LEN {
        return Err(CoreError::InvalidArgument(format!(
            "prompt width must be 1..={}, got {width}",
            crate::vocab::MAX_CAPTION_LEN
        )));
    }
    let objective = build_objective(pairs, ObjectiveVariant::default())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<usize> = (0..width).map(|_| rng.gen_range(0..vocab.size())).collect();
    let mut e_hat = vocab.embed(&init)?;

    let mut trajectory = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (_, projected) = project_to_vocab(&e_hat, vocab)?;
        let mut f_total = 0.0;
        for w in 0..width {
            let row = projected.rows().row(w).to_owned();
            let (f, grad) = objective.value_and_grad(&row)?;
            f_total += f;
            let gnorm = grad.dot(&grad).sqrt();
            if gnorm > 0.0 {
                let step = grad / gnorm * lr;
                for j in 0..e_hat.ncols() {
                    e_hat[[w, j]] += step[j];
                }
            }
        }
        trajectory.push(f_total);
    }
    let (tokens, _) = project_to_vocab(&e_hat, vocab)?;
    Ok(HardPromptResult { tokens, trajectory })
}
