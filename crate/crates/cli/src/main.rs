//! Command-line harness around the extraction pipeline.
//!
//! Every subcommand is driven by one declarative TOML config (paths in it
//! resolve relative to the config file) and a run seed inside that config;
//! rerunning any subcommand with the same inputs reproduces its CSV
//! outputs byte for byte. Exit codes: 0 success, 2 bad configuration or
//! inputs, 3 numeric failure, 4 infeasible clustering.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use finextract_cli::ablate::{run_ablation, SweepParam};
use finextract_cli::caption_cmd::{run_caption_attack, CaptionAttackArgs};
use finextract_cli::config::ExperimentConfig;
use finextract_cli::pipeline::{
    ensure_finetuned, ensure_pretrained, rerender_report, run_pipeline,
};
use finextract_core::error::CoreError;

#[derive(Parser)]
#[command(name = "finextract", version, about = "Fine-tuning data extraction lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train (or reuse) the base model on the configured mixture.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the base model on the configured targets.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full run: sample all three methods, cluster, score, report.
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one parameter, one pipeline run per value.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One of: w_prime, k, n, n0.
        #[arg(long)]
        param: String,
        /// Comma-separated values to sweep.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Recover the fine-tuning caption from a checkpoint pair.
    CaptionAttack {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Token count of the recovered prompt.
        #[arg(long, default_value_t = 1)]
        width: usize,
        #[arg(long, default_value_t = 400)]
        iters: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth tokens, comma-separated; enables the recovery rate.
        #[arg(long, value_delimiter = ',')]
        truth: Option<Vec<usize>>,
    },
    /// Re-score stored samples and rewrite report.csv and the plots.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::InfeasibleClustering { .. }) => 4,
        Some(
            CoreError::NumericFailure { .. }
            | CoreError::TrainingFailure { .. }
            | CoreError::ContractViolation(_)
            | CoreError::DegenerateDelta(_),
        ) => 3,
        Some(CoreError::Io(_)) | None => 1,
        Some(_) => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Pretrain { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (_, path, spent) = ensure_pretrained(&cfg, &out.join("checkpoints"))?;
            println!("pretrained checkpoint: {} ({spent:?})", path.display());
        }
        Cmd::Finetune { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let cache = out.join("checkpoints");
            let (pre, pre_path, _) = ensure_pretrained(&cfg, &cache)?;
            let (_, path, spent) = ensure_finetuned(&cfg, &pre, &pre_path, &cache)?;
            println!("fine-tuned checkpoint: {} ({spent:?})", path.display());
        }
        Cmd::Extract { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_pipeline(&cfg, &out)?;
            for o in &report.outcomes {
                println!("{}: avg similarity {:.4}", o.method, o.metrics.avg_similarity);
            }
            println!("report: {}", out.join("report.csv").display());
        }
        Cmd::Ablate {
            config,
            out,
            param,
            values,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let param = SweepParam::parse(&param)?;
            let rows = run_ablation(&cfg, param, &values, &out)?;
            println!(
                "swept {} over {} values; table: {}",
                param.name(),
                rows.len(),
                out.join("ablation.csv").display()
            );
        }
        Cmd::CaptionAttack {
            pre,
            post,
            out,
            width,
            iters,
            lr,
            seed,
            truth,
        } => {
            let args = CaptionAttackArgs {
                width,
                iters,
                lr,
                seed,
                truth,
            };
            let outcome = run_caption_attack(&pre, &post, &args, &out)?;
            if let Some(msg) = &outcome.degenerate {
                println!("degenerate delta: {msg}");
            } else {
                let tokens = outcome
                    .hard_tokens
                    .iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                println!(
                    "rowspace token: {}; hard prompt: [{tokens}]",
                    outcome.rowspace_token.unwrap()
                );
                if let Some(rate) = outcome.rowspace_rate {
                    println!("rowspace recovery rate: {rate}");
                }
                if let Some(rate) = outcome.hard_rate {
                    println!("hard-prompt recovery rate: {rate}");
                }
            }
        }
        Cmd::Report { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            rerender_report(&cfg, &out)?;
            println!("rewrote {}", out.join("report.csv").display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
