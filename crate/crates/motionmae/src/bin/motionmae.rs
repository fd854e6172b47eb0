use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motionmae::checkpoint::load_checkpoint;
use motionmae::config::{RunConfig, DEFAULTS_HELP};
use motionmae::dataset::{synthesize, write_dataset, Split};
use motionmae::runner::{
    gradcheck_all, load_init, load_train_set, load_val_set, run_ablation, run_finetune, run_pretrain, run_reconstruct,
    threads_from_env, write_report, METRICS_JSON,
};
use motionmae::{Error, Result};
use motionmae_core::verify::TOLERANCE;

/// Masked video autoencoder with frame and motion reconstruction heads.
///
/// Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error,
/// 4 numerical error.
#[derive(Parser)]
#[command(name = "motionmae", version, after_help = DEFAULTS_HELP)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => RunConfig::from_json("{}"),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic moving-square dataset.
    #[command(after_help = DEFAULTS_HELP)]
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Sample stream: `train` or `val`.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Pretrain on `data.dataset_dir`; prints `final_loss=<value>`.
    #[command(after_help = DEFAULTS_HELP)]
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Finetune a classifier and write `metrics.json`.
    #[command(after_help = DEFAULTS_HELP)]
    Finetune {
        #[command(flatten)]
        config: ConfigArg,
        /// Pretraining checkpoint, or `none`.
        #[arg(long)]
        init: String,
    },
    /// Render one reconstruction PPM per masking ratio.
    #[command(after_help = DEFAULTS_HELP)]
    Reconstruct {
        #[command(flatten)]
        config: ConfigArg,
        /// Pretraining checkpoint, or `none`.
        #[arg(long, default_value = "none")]
        init: String,
        /// Comma-separated ratios, e.g. `0.9,0.95`.
        #[arg(long, value_delimiter = ',', required = true)]
        ratio: Vec<f64>,
        /// Index of the dataset clip to render.
        #[arg(long, default_value_t = 0)]
        clip: usize,
    },
    /// Finite-difference check of every primitive and the tiny model.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Sweep one axis, pretraining and finetuning per setting.
    #[command(after_help = DEFAULTS_HELP)]
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// target_kind, gap, loss_kind, ratio or decoder.
        #[arg(long)]
        axis: String,
    },
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { config, count, out, split } => {
            let cfg = config.load()?;
            let split = Split::parse(&split)
                .ok_or_else(|| Error::Config(format!("--split: unknown value `{split}` (expected train or val)")))?;
            let ds = synthesize(&cfg, split, count)?;
            write_dataset(&ds, &out)?;
            println!("wrote {count} clips to {}", out.display());
        }
        Cmd::Pretrain { config, resume } => {
            let cfg = config.load()?;
            let threads = threads_from_env()?;
            let ds = load_train_set(&cfg)?;
            let resume = resume.as_deref().map(load_checkpoint).transpose()?;
            let out = run_pretrain(&cfg, &ds, &cfg.out_dir(), resume, threads)?;
            println!("checkpoint={}", out.checkpoint_path.display());
            println!("final_loss={}", out.final_loss);
        }
        Cmd::Finetune { config, init } => {
            let cfg = config.load()?;
            let threads = threads_from_env()?;
            let ck = load_init(&init)?;
            let train = load_train_set(&cfg)?;
            let val = load_val_set(&cfg, &train)?;
            let (report, _) = run_finetune(&cfg, &train, &val, ck.as_ref(), threads)?;
            let dir = cfg.out_dir();
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            write_report(&report, &dir.join(METRICS_JSON))?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Cmd::Reconstruct { config, init, ratio, clip } => {
            let cfg = config.load()?;
            let ck = load_init(&init)?;
            let ds = load_train_set(&cfg)?;
            let video = ds
                .clips
                .get(clip)
                .ok_or_else(|| Error::Config(format!("--clip: {clip} outside a dataset of {}", ds.len())))?;
            for p in run_reconstruct(&cfg, ck.as_ref(), video, &ratio, &cfg.out_dir())? {
                println!("{}", p.display());
            }
        }
        Cmd::Gradcheck { config } => {
            let cfg = config.load()?;
            let results = gradcheck_all(cfg.seed)?;
            let mut failed = Vec::new();
            for r in &results {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{:<28} max_rel={:.3e} coords={:<6} {verdict}",
                    r.name, r.report.max_rel_error, r.report.coordinates
                );
                if !r.passed() {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Error::CheckFailed(format!("relative error above {TOLERANCE:e} in: {}", failed.join(", "))));
            }
            println!("all {} checks below {TOLERANCE:e}", results.len());
        }
        Cmd::Ablate { config, axis } => {
            let cfg = config.load()?;
            let threads = threads_from_env()?;
            motionmae::runner::Axis::parse(&axis)?;
            let train = load_train_set(&cfg)?;
            let val = load_val_set(&cfg, &train)?;
            let out = cfg.out_dir();
            println!("setting,top1");
            for (label, top1) in run_ablation(&cfg, &axis, &train, &val, &out, threads)? {
                println!("{label},{top1}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

