//! The end-to-end run: pretrain, fine-tune, then sample / cluster / score
//! once per extraction method.
//!
//! Checkpoints are cached under a content hash of everything that feeds
//! them, so ablation sweeps re-train only what a swept parameter actually
//! touches. Freshly trained models are saved and immediately reloaded so
//! cached and fresh runs see bit-identical (f32-quantized) weights. All
//! three methods sample under the same derived seed: generation noise is
//! a pure function of (seed, sample, step), which is what makes the
//! reduction rows of an ablation match the baseline byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use finextract_core::checkpoint::{load_checkpoint, save_checkpoint};
use finextract_core::extraction::extract;
use finextract_core::guidance::make_guided_denoiser;
use finextract_core::metrics::{metric_report, SimilarityFn};
use finextract_core::mlp::MLPDenoiser;
use finextract_core::rng::derive_seed;
use finextract_core::sampler::ancestral_sample;
use finextract_core::train::{finetune_full, finetune_lora, pretrain};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Method};
use crate::plot::scatter_svg;
use crate::report::{write_run_artifacts, MethodOutcome, RunReport};

fn hash_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let digest = h.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn f64_bytes(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * m.len());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Pretraining data drawn from the base mixture, seeded from the run seed.
pub fn base_training_data(cfg: &ExperimentConfig) -> Result<Array2<f64>> {
    let mixture = cfg.base_mixture()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "base-data"));
    Ok(mixture.sample(cfg.base.train_points, &mut rng))
}

fn pre_cache_key(cfg: &ExperimentConfig, base_data: &Array2<f64>) -> Result<String> {
    let arch = serde_json::to_vec(&cfg.arch)?;
    let sched = serde_json::to_vec(&cfg.schedule)?;
    let train = serde_json::to_vec(&cfg.pretrain)?;
    Ok(hash_hex(&[
        b"pre-v1",
        &arch,
        &sched,
        &train,
        &f64_bytes(base_data),
    ]))
}

fn ft_cache_key(cfg: &ExperimentConfig, pre_key: &str, targets: &Array2<f64>) -> Result<String> {
    let spec = serde_json::to_vec(&cfg.finetune)?;
    let caption = serde_json::to_vec(&cfg.targets.caption)?;
    Ok(hash_hex(&[
        b"ft-v1",
        pre_key.as_bytes(),
        &spec,
        &caption,
        &f64_bytes(targets),
    ]))
}

/// Train-or-load through the checkpoint cache. The returned model always
/// comes from disk so its weights match a cache hit exactly.
pub fn ensure_pretrained(
    cfg: &ExperimentConfig,
    cache_dir: &Path,
) -> Result<(MLPDenoiser, PathBuf, Duration)> {
    let data = base_training_data(cfg)?;
    let key = pre_cache_key(cfg, &data)?;
    let path = cache_dir.join(format!("pre-{key}.ckpt"));
    let mut spent = Duration::ZERO;
    if !path.exists() {
        fs::create_dir_all(cache_dir)?;
        let t0 = Instant::now();
        let schedule = cfg.noise_schedule()?;
        let model = pretrain(&cfg.arch, &data, &cfg.pretrain.to_core()?, &schedule)
            .context("stage pretrain")?;
        spent = t0.elapsed();
        save_checkpoint(&model, cfg.pretrain.seed, &path)?;
    }
    let (model, _) = load_checkpoint(&path)?;
    Ok((model, path, spent))
}

pub fn ensure_finetuned(
    cfg: &ExperimentConfig,
    pre: &MLPDenoiser,
    pre_path: &Path,
    cache_dir: &Path,
) -> Result<(MLPDenoiser, PathBuf, Duration)> {
    let targets = cfg.target_points()?;
    let pre_key = pre_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let key = ft_cache_key(cfg, &pre_key, &targets)?;
    let path = cache_dir.join(format!("ft-{key}.ckpt"));
    let mut spent = Duration::ZERO;
    if !path.exists() {
        fs::create_dir_all(cache_dir)?;
        let items: Vec<(Vec<f64>, Vec<usize>)> = targets
            .rows()
            .into_iter()
            .map(|r| (r.to_vec(), cfg.targets.caption.clone()))
            .collect();
        let schedule = cfg.noise_schedule()?;
        let train = cfg.finetune.train.to_core()?;
        let t0 = Instant::now();
        let model = match cfg.finetune.method.as_str() {
            "full" => finetune_full(pre, &items, &train, &schedule),
            "lora" => finetune_lora(pre, &items, cfg.finetune.rank.unwrap_or(1), &train, &schedule),
            other => unreachable!("validated method {other}"),
        }
        .context("stage finetune")?;
        spent = t0.elapsed();
        save_checkpoint(&model, cfg.finetune.train.seed, &path)?;
    }
    let (model, _) = load_checkpoint(&path)?;
    Ok((model, path, spent))
}

fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    pre: &MLPDenoiser,
    ft: &MLPDenoiser,
    targets: &Array2<f64>,
    out_dir: &Path,
) -> Result<MethodOutcome> {
    let schedule = cfg.noise_schedule()?;
    let n = cfg.generation_count()?;
    let n0 = targets.nrows();
    let sim = SimilarityFn::by_name(&cfg.similarity)?;
    let guided = make_guided_denoiser(pre, ft, cfg.guidance_for(method)?)?;
    let sample_seed = derive_seed(cfg.seed, "sampling");

    let t0 = Instant::now();
    let samples = ancestral_sample(&guided, &schedule, n, Some(&cfg.targets.caption), sample_seed)
        .with_context(|| format!("stage sample ({})", method.name()))?;
    let sample_time = t0.elapsed();
    // Retain the raw samples before extraction can fail.
    crate::report::write_samples(
        &out_dir.join(format!("samples_{}.bin", method.name())),
        &samples.points,
    )?;

    let t1 = Instant::now();
    let extraction = extract(&samples, n0, &sim, &cfg.clustering.to_core(n0))
        .with_context(|| format!("stage extract ({})", method.name()))?;
    let extract_time = t1.elapsed();

    // Score what the artifacts hold: the stored sample format is f32, so
    // metrics run on the quantized values and re-deriving the report from
    // disk reproduces it byte for byte.
    let quantize = |m: &Array2<f64>| m.mapv(|v| v as f32 as f64);
    let extracted = quantize(&extraction.points);
    let metrics = metric_report(targets, &extracted, &sim, &cfg.taus)
        .with_context(|| format!("stage score ({})", method.name()))?;
    Ok(MethodOutcome {
        method: method.name(),
        samples: quantize(&samples.points),
        extracted,
        extracted_indices: extraction.indices,
        cliques: extraction.cliques,
        metrics,
        sample_time,
        extract_time,
    })
}

/// Run the three methods side by side and write the full artifact set.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let cache = out_dir.join("checkpoints");
    run_pipeline_with_cache(cfg, out_dir, &cache)
}

/// As `run_pipeline`, with the checkpoint cache at a caller-chosen place
/// so sweeps over sampling-side parameters reuse one pretrained model.
pub fn run_pipeline_with_cache(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    cache_dir: &Path,
) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let config_echo = toml::to_string_pretty(cfg)?;
    let run_id = hash_hex(&[b"run-v1", config_echo.as_bytes()]);
    fs::write(out_dir.join("config_echo.toml"), &config_echo)?;

    let (pre, pre_path, pretrain_time) = ensure_pretrained(cfg, cache_dir)?;
    let (ft, _, finetune_time) = ensure_finetuned(cfg, &pre, &pre_path, cache_dir)?;
    let targets = cfg.target_points()?;

    // Methods are independent: no shared state beyond the frozen models,
    // so they run on their own threads and join in declaration order.
    let outcomes: Vec<MethodOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = Method::ALL
            .iter()
            .map(|&m| {
                let (pre, ft, targets) = (&pre, &ft, &targets);
                scope.spawn(move || run_method(cfg, m, pre, ft, targets, out_dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("method thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let report = RunReport {
        run_id,
        config_echo,
        outcomes,
        pretrain_time,
        finetune_time,
    };
    write_run_artifacts(out_dir, &report, &cfg.taus)?;
    for o in &report.outcomes {
        let svg = scatter_svg(o.method, &o.samples, &o.extracted, &targets);
        fs::write(out_dir.join(format!("plot_scatter_{}.svg", o.method)), svg)?;
    }
    Ok(report)
}

/// Re-score stored samples and re-render the report without re-sampling.
pub fn rerender_report(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let targets = cfg.target_points()?;
    let sim = SimilarityFn::by_name(&cfg.similarity)?;
    let config_echo = toml::to_string_pretty(cfg)?;
    let run_id = hash_hex(&[b"run-v1", config_echo.as_bytes()]);

    let mut rows = String::new();
    rows.push_str(&format!(
        "run_id,method,avg_similarity{}\n",
        cfg.taus
            .iter()
            .map(|t| format!(",a_esr@{t}"))
            .collect::<String>()
    ));
    for method in Method::ALL {
        let name = method.name();
        let extracted = crate::report::read_samples(&out_dir.join(format!("extracted_{name}.bin")))
            .with_context(|| format!("stage report ({name})"))?;
        let samples = crate::report::read_samples(&out_dir.join(format!("samples_{name}.bin")))?;
        let metrics = metric_report(&targets, &extracted, &sim, &cfg.taus)?;
        rows.push_str(&format!("{run_id},{name},{}", metrics.avg_similarity));
        for (_, rate) in &metrics.esr {
            rows.push_str(&format!(",{rate}"));
        }
        rows.push('\n');
        let svg = scatter_svg(name, &samples, &extracted, &targets);
        fs::write(out_dir.join(format!("plot_scatter_{name}.svg")), svg)?;
    }
    fs::write(out_dir.join("report.csv"), rows)?;
    Ok(())
}
