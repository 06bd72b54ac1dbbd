//! Run artifacts: binary sample files, CSV reports, and timings.
//!
//! Everything except timings.txt is a pure function of config and seed,
//! so reruns produce byte-identical files; wall-clock numbers live in
//! their own file to keep that property checkable.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use finextract_core::error::{CoreError, Result};
use finextract_core::extraction::CliqueSet;
use finextract_core::metrics::MetricReport;
use ndarray::Array2;

const SAMPLE_MAGIC: &[u8; 4] = b"FXSB";
const SAMPLE_VERSION: u32 = 1;

/// Write an N x d matrix as little-endian f32 with a 16-byte header
/// {magic, version, N, d}.
pub fn write_samples(path: &Path, points: &Array2<f64>) -> Result<()> {
    let (n, d) = points.dim();
    let mut buf = Vec::with_capacity(16 + 4 * n * d);
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for v in points.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| CoreError::Config(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != SAMPLE_MAGIC {
        return Err(bad("not a sample file"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if word(4) != SAMPLE_VERSION {
        return Err(bad("unsupported sample file version"));
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    if bytes.len() != 16 + 4 * n * d {
        return Err(bad("truncated sample file"));
    }
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let at = 16 + 4 * (i * d + j);
            out[[i, j]] =
                f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
        }
    }
    Ok(out)
}

/// Everything one method produced in a run.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: &'static str,
    pub samples: Array2<f64>,
    pub extracted: Array2<f64>,
    pub extracted_indices: Vec<usize>,
    pub cliques: CliqueSet,
    pub metrics: MetricReport,
    pub sample_time: Duration,
    pub extract_time: Duration,
}

/// A full pipeline run: one outcome per method plus the config echo.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_id: String,
    pub config_echo: String,
    pub outcomes: Vec<MethodOutcome>,
    pub pretrain_time: Duration,
    pub finetune_time: Duration,
}

fn esr_headers(taus: &[f64]) -> String {
    taus.iter()
        .map(|t| format!(",a_esr@{t}"))
        .collect::<String>()
}

/// The per-method metric table. Column order is fixed; floats use the
/// shortest round-trip form so identical runs give identical bytes.
pub fn report_csv(run_id: &str, outcomes: &[MethodOutcome], taus: &[f64]) -> String {
    let mut out = format!("run_id,method,avg_similarity{}\n", esr_headers(taus));
    for o in outcomes {
        out.push_str(&format!("{run_id},{},{}", o.method, o.metrics.avg_similarity));
        for (_, rate) in &o.metrics.esr {
            out.push_str(&format!(",{rate}"));
        }
        out.push('\n');
    }
    out
}

/// One row per retained clique per method.
pub fn cliques_csv(outcomes: &[MethodOutcome]) -> String {
    let mut out = String::from("method,phi_star,truncated,clique_index,size,centroid_index\n");
    for o in outcomes {
        for (ci, clique) in o.cliques.cliques.iter().enumerate() {
            let centroid = o
                .extracted_indices
                .get(ci)
                .map(|i| i.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{ci},{},{centroid}\n",
                o.method,
                o.cliques.phi_star,
                o.cliques.truncated,
                clique.len(),
            ));
        }
    }
    out
}

pub fn timings_txt(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("pretrain: {:?}\n", report.pretrain_time));
    out.push_str(&format!("finetune: {:?}\n", report.finetune_time));
    for o in &report.outcomes {
        out.push_str(&format!(
            "{}: sample {:?}, extract {:?}\n",
            o.method, o.sample_time, o.extract_time
        ));
    }
    out
}

/// Write the full artifact set for a run directory.
pub fn write_run_artifacts(dir: &Path, report: &RunReport, taus: &[f64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config_echo.toml"), &report.config_echo)?;
    for o in &report.outcomes {
        write_samples(&dir.join(format!("samples_{}.bin", o.method)), &o.samples)?;
        write_samples(
            &dir.join(format!("extracted_{}.bin", o.method)),
            &o.extracted,
        )?;
    }
    fs::write(
        dir.join("report.csv"),
        report_csv(&report.run_id, &report.outcomes, taus),
    )?;
    fs::write(dir.join("cliques.csv"), cliques_csv(&report.outcomes))?;
    let mut timings = fs::File::create(dir.join("timings.txt"))?;
    timings.write_all(timings_txt(report).as_bytes())?;
    Ok(())
}
