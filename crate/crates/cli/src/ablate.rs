//! Parameter sweeps over a base configuration.
//!
//! One pipeline run per swept value, all sharing a single checkpoint
//! cache so the pretrained model (and, except for N0 sweeps, the
//! fine-tuned one) is trained once. The w_prime sweep sets the same w'
//! for both guided methods; every other knob keeps its configured value,
//! so with k = 0 in the base config the w' = 1 row collapses onto the
//! Direct baseline exactly. The k sweep varies k alone.

use std::fs;
use std::path::Path;

use anyhow::Result;
use finextract_core::error::CoreError;

use crate::config::ExperimentConfig;
use crate::pipeline::run_pipeline_with_cache;
use crate::plot::sweep_svg;
use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    WPrime,
    K,
    N,
    N0,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self, CoreError> {
        match name {
            "w_prime" => Ok(SweepParam::WPrime),
            "k" => Ok(SweepParam::K),
            "n" => Ok(SweepParam::N),
            "n0" => Ok(SweepParam::N0),
            other => Err(CoreError::Config(format!(
                "unknown sweep parameter {other:?}, expected w_prime, k, n, or n0"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::WPrime => "w_prime",
            SweepParam::K => "k",
            SweepParam::N => "n",
            SweepParam::N0 => "n0",
        }
    }
}

fn as_count(param: SweepParam, v: f64) -> Result<usize, CoreError> {
    if !v.is_finite() || v < 1.0 || v.fract() != 0.0 {
        return Err(CoreError::Config(format!(
            "sweep value {v} for {} must be a positive integer",
            param.name()
        )));
    }
    Ok(v as usize)
}

/// The base config with one swept value applied.
fn apply(cfg: &ExperimentConfig, param: SweepParam, v: f64) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    match param {
        SweepParam::WPrime => {
            out.guidance.fx_w_prime = Some(v);
            out.guidance.cfg_w_prime = Some(v);
        }
        SweepParam::K => {
            out.guidance.k = Some(v);
        }
        SweepParam::N => {
            out.n_generate = Some(as_count(param, v)?);
        }
        SweepParam::N0 => {
            let n0 = as_count(param, v)?;
            let points = cfg.target_points()?;
            if n0 > points.nrows() {
                return Err(CoreError::Config(format!(
                    "n0 sweep value {n0} exceeds the {} available targets",
                    points.nrows()
                ))
                .into());
            }
            out.targets.points_file = None;
            out.targets.points = points
                .rows()
                .into_iter()
                .take(n0)
                .map(|r| r.to_vec())
                .collect();
        }
    }
    out.validate()?;
    Ok(out)
}

/// One row per swept value; per-method metric columns side by side.
pub fn ablation_csv(
    param: SweepParam,
    rows: &[(f64, RunReport)],
    taus: &[f64],
) -> String {
    let mut header = String::from("param,value");
    if let Some((_, first)) = rows.first() {
        for o in &first.outcomes {
            header.push_str(&format!(",{}_avg_similarity", o.method));
            for t in taus {
                header.push_str(&format!(",{}_a_esr@{t}", o.method));
            }
        }
    }
    header.push('\n');
    let mut out = header;
    for (v, report) in rows {
        out.push_str(&format!("{},{v}", param.name()));
        for o in &report.outcomes {
            out.push_str(&format!(",{}", o.metrics.avg_similarity));
            for (_, rate) in &o.metrics.esr {
                out.push_str(&format!(",{rate}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Run the sweep, write `ablation.csv` and `plot_sweep.svg` at the root,
/// and leave each value's full artifact set in its own subdirectory.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
) -> Result<Vec<(f64, RunReport)>> {
    if values.is_empty() {
        return Err(CoreError::Config("sweep needs at least one value".into()).into());
    }
    fs::create_dir_all(out_dir)?;
    let cache_dir = out_dir.join("checkpoints");
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let run_cfg = apply(cfg, param, v)?;
        let sub = out_dir.join(format!("{}_{v}", param.name()));
        let report = run_pipeline_with_cache(&run_cfg, &sub, &cache_dir)?;
        rows.push((v, report));
    }
    fs::write(
        out_dir.join("ablation.csv"),
        ablation_csv(param, &rows, &cfg.taus),
    )?;

    let series: Vec<(String, Vec<(f64, f64)>)> = rows
        .first()
        .map(|(_, first)| (0..first.outcomes.len()).collect::<Vec<_>>())
        .unwrap_or_default()
        .into_iter()
        .map(|mi| {
            let name = rows[0].1.outcomes[mi].method.to_string();
            let pts = rows
                .iter()
                .map(|(v, r)| (*v, r.outcomes[mi].metrics.avg_similarity))
                .collect();
            (name, pts)
        })
        .collect();
    fs::write(
        out_dir.join("plot_sweep.svg"),
        sweep_svg("average similarity across the sweep", param.name(), &series),
    )?;
    Ok(rows)
}
