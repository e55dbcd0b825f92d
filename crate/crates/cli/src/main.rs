//! `tqd`: generate synthetic data, train, evaluate, run ablation grids and
//! export attention maps and per-clip tables.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration, 3 data, 4 numeric or
//! training failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tqd::config::TrainConfig;
use tqd::data::{gen_synthetic, Dataset, Split, SynthConfig};
use tqd::export::{clips_csv, write_attention_maps};
use tqd::trainer::{
    ablation_csv, epoch_log_csv, evaluate, preset_grid, run_ablation, train, weight_recovery,
    AblationGrid, Checkpoint, TrainStatus,
};
use tqd::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(
    name = "tqd",
    version,
    about = "Query-based temporal decoder for action quality assessment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`[model]`, `[loss]`, `[train]` sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override `section.key=value`; repeatable, applied after the
    /// config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-structure synthetic dataset.
    GenSynth {
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 50)]
        n_test: usize,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train every cell of an ablation grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Preset grid: modules, pe or variance.
        #[arg(long, conflicts_with = "axis")]
        grid: Option<String>,
        /// Grid axis `key=v1,v2`; repeatable, combined as a product.
        #[arg(long)]
        axis: Vec<String>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-layer self and cross map CSVs and PGMs for one sample.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the per-clip weight/score table for one sample.
    ExportClips {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: String,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Io => 1,
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn load_config(c: &Common) -> Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| with_path(&dir, e))?;
    Ok(dir)
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| with_path(path, e))
}

fn load_sample(
    checkpoint: &Path,
    data: &Path,
    sample: &str,
) -> Result<(Checkpoint<f64>, tqd::model::Assessment<f64>)> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let ds = Dataset::load(data)?;
    let s = ds
        .get(sample)
        .ok_or_else(|| Error::Data(format!("no sample {sample:?} in {}", data.display())))?;
    let a = ck.model.assess(&ck.config.model, &s.features.cast())?;
    Ok((ck, a))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth {
            n_train,
            n_test,
            clips,
            dim,
            noise,
            common,
        } => {
            let cfg = SynthConfig {
                n_train,
                n_test,
                clips,
                dim,
                noise_sigma: noise,
                seed: common.seed.unwrap_or(0),
            };
            let dir = out_dir(&common)?;
            gen_synthetic(&cfg)?.dataset.write(&dir)?;
            println!("wrote {} samples to {}", n_train + n_test, dir.display());
        }
        Command::Train { data, common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let ds = Dataset::load(&data)?;
            write(&dir.join("config.ini"), cfg.to_text())?;
            let out = train::<f64>(&cfg, &ds)?;
            write(&dir.join("epoch_log.csv"), epoch_log_csv(&out.log))?;
            out.best.save(&dir.join("best.ckpt"))?;
            out.last.save(&dir.join("last.ckpt"))?;
            write(&dir.join("final_report.txt"), out.final_report.to_kv())?;
            write(&dir.join("best_report.txt"), out.best_report.to_kv())?;
            println!("best epoch {}", out.best.epoch);
            print!("{}", out.final_report.to_kv());
            if let TrainStatus::Diverged { epoch, reason } = out.status {
                return Err(Error::Training(format!(
                    "diverged in epoch {epoch}: {reason}; last good state saved"
                )));
            }
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            common,
        } => {
            let split: Split = split.parse()?;
            let ck = Checkpoint::<f64>::load(&checkpoint)?;
            let ds = Dataset::load(&data)?.normalized()?;
            let samples = ds.split(split);
            if samples.len() < 2 {
                return Err(Error::Data(format!(
                    "{} split has {} samples",
                    split.as_str(),
                    samples.len()
                )));
            }
            let report = evaluate(&ck.model, &ck.config, &samples, 0.0, 1.0)?;
            let mut text = report.to_kv();
            if samples.iter().all(|s| s.truth.is_some()) {
                let r = weight_recovery(&ck.model, &ck.config, &samples)?;
                text.push_str(&format!("weight_recovery={r}\n"));
            }
            print!("{text}");
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).map_err(|e| with_path(dir, e))?;
                write(&dir.join("eval.txt"), &text)?;
            }
        }
        Command::Ablate {
            data,
            grid,
            axis,
            seeds,
            threads,
            common,
        } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let grid = match grid {
                Some(name) => preset_grid(&name)?,
                None => AblationGrid::from_axes(&axis)?,
            };
            let ds = Dataset::load(&data)?;
            let rows = run_ablation::<f64>(&cfg, &grid, &ds, &seeds, threads)?;
            let csv = ablation_csv(&rows);
            write(&dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::ExportAttention {
            checkpoint,
            data,
            sample,
            common,
        } => {
            let dir = out_dir(&common)?;
            let (_, a) = load_sample(&checkpoint, &data, &sample)?;
            for p in write_attention_maps(&dir, &a)? {
                println!("{}", p.display());
            }
        }
        Command::ExportClips {
            checkpoint,
            data,
            sample,
            common,
        } => {
            let dir = out_dir(&common)?;
            let (_, a) = load_sample(&checkpoint, &data, &sample)?;
            let csv = clips_csv(&a.clips);
            write(&dir.join(format!("clips_{sample}.csv")), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
