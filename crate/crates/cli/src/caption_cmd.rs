//! Caption recovery from a checkpoint pair.
//!
//! Two routes run side by side. The rowspace route scores each vocabulary
//! embedding directly against the conditioning-layer delta; for a
//! single-token fine-tune the delta is rank one and this argmax is exact.
//! The hard-prompt route is the general projected-ascent loop over a
//! width-w token sequence; it reports its objective trajectory so a stall
//! is visible in the artifacts. A pre = post pair has nothing to recover:
//! that comes back as a degenerate-delta note in the report, not a crash.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use finextract_core::caption::{export_layer_pair, hard_prompt_extract, rowspace_argmax_single};
use finextract_core::checkpoint::load_checkpoint;
use finextract_core::error::CoreError;

#[derive(Debug, Clone)]
pub struct CaptionAttackArgs {
    pub width: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub truth: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct CaptionOutcome {
    /// Exact single-token route: best vocabulary row in the delta rowspace.
    pub rowspace_token: Option<usize>,
    /// Projected-ascent route over the requested width.
    pub hard_tokens: Vec<usize>,
    pub trajectory: Vec<f64>,
    /// Set when the layer delta carries no signal (pre = post).
    pub degenerate: Option<String>,
    pub rowspace_rate: Option<f64>,
    pub hard_rate: Option<f64>,
}

fn recovered_fraction(truth: &[usize], recovered: &[usize]) -> f64 {
    let hits = truth.iter().filter(|t| recovered.contains(t)).count();
    hits as f64 / truth.len() as f64
}

pub fn run_caption_attack(
    pre_path: &Path,
    post_path: &Path,
    args: &CaptionAttackArgs,
    out_dir: &Path,
) -> Result<CaptionOutcome> {
    let (pre, _) = load_checkpoint(pre_path).context("loading pretrained checkpoint")?;
    let (post, _) = load_checkpoint(post_path).context("loading fine-tuned checkpoint")?;
    let vocab = post.vocab();
    if let Some(truth) = &args.truth {
        if truth.is_empty() || truth.iter().any(|&t| t >= vocab.size()) {
            return Err(CoreError::Config(
                "ground-truth tokens must be non-empty and within the vocabulary".into(),
            )
            .into());
        }
    }

    let pairs = export_layer_pair(&pre, &post, &["wc"])?;
    let mut outcome = match rowspace_argmax_single(&pairs, vocab) {
        Ok(token) => {
            let hard = hard_prompt_extract(&pairs, vocab, args.width, args.iters, args.lr, args.seed)?;
            CaptionOutcome {
                rowspace_token: Some(token),
                hard_tokens: hard.tokens,
                trajectory: hard.trajectory,
                degenerate: None,
                rowspace_rate: None,
                hard_rate: None,
            }
        }
        Err(CoreError::DegenerateDelta(msg)) => CaptionOutcome {
            rowspace_token: None,
            hard_tokens: Vec::new(),
            trajectory: Vec::new(),
            degenerate: Some(msg),
            rowspace_rate: None,
            hard_rate: None,
        },
        Err(e) => return Err(e.into()),
    };
    if let (Some(truth), None) = (&args.truth, &outcome.degenerate) {
        outcome.rowspace_rate = outcome
            .rowspace_token
            .map(|t| recovered_fraction(truth, &[t]));
        outcome.hard_rate = Some(recovered_fraction(truth, &outcome.hard_tokens));
    }

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("caption.csv"), caption_csv(&outcome))?;
    let mut traj = String::from("iteration,objective\n");
    for (i, f) in outcome.trajectory.iter().enumerate() {
        traj.push_str(&format!("{i},{f}\n"));
    }
    fs::write(out_dir.join("trajectory.csv"), traj)?;
    Ok(outcome)
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map(|r| r.to_string()).unwrap_or_default()
}

fn caption_csv(o: &CaptionOutcome) -> String {
    let mut out = String::from("route,tokens,recovery_rate,note\n");
    let note = o.degenerate.as_deref().unwrap_or_default();
    let rowspace = o
        .rowspace_token
        .map(|t| t.to_string())
        .unwrap_or_default();
    out.push_str(&format!(
        "rowspace,{rowspace},{},{note}\n",
        fmt_rate(o.rowspace_rate)
    ));
    let hard = o
        .hard_tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    out.push_str(&format!(
        "hard_prompt,{hard},{},{note}\n",
        fmt_rate(o.hard_rate)
    ));
    out
}
