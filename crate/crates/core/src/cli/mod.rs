//! `minit` command line: `gen-data`, `train`, `eval`, `rollout`.

mod commands;
mod config;

pub use commands::{cmd_eval, cmd_gen_data, cmd_rollout, cmd_train, load_model, RolloutOutput, TrainSummary};
pub use config::{ConfigFile, Overrides, RunConfig, KEYS};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "minit", version, about = "3D vision transformers for volumetric classification")]
pub struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Named architecture preset.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, augment and split a synthetic dataset into --out.
    GenData,
    /// Train on `data.dir`, writing checkpoints and a metrics log into --out.
    Train,
    /// Score a checkpoint on one split.
    Eval {
        /// Defaults to `<out>/best.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Export an attention-rollout map for one volume.
    Rollout {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Volume header (`.json`).
        #[arg(long)]
        volume: PathBuf,
    },
}

impl Cli {
    /// Resolves the run configuration: an explicit --config, else a
    /// `config.txt` next to the checkpoint, else the defaults.
    pub fn run_config(&self) -> Result<RunConfig> {
        let ckpt = match &self.command {
            Command::Eval { checkpoint, .. } | Command::Rollout { checkpoint, .. } => checkpoint.clone(),
            _ => None,
        };
        let file = match (&self.config, ckpt.as_ref().and_then(|c| c.parent().map(|p| p.join("config.txt")))) {
            (Some(p), _) => ConfigFile::read(p)?,
            (None, Some(p)) if p.exists() => ConfigFile::read(&p)?,
            _ => ConfigFile::default(),
        };
        let flags = Overrides { preset: self.preset.clone(), seed: self.seed, out: self.out.clone(), workers: self.workers };
        let (cfg, warnings) = RunConfig::resolve(&file, &flags)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::GenData => {
            let counts = cmd_gen_data(&cfg)?;
            println!("wrote {} train, {} val, {} test volumes", counts[0], counts[1], counts[2]);
        }
        Command::Train => {
            let s = cmd_train(&cfg, |m| {
                if cli.verbose {
                    eprintln!("{}", serde_json::to_string(m).expect("metrics serialize"));
                }
            })?;
            match s.best_epoch {
                Some(e) => println!("best val accuracy {:.4} at epoch {e}", s.best_val_acc.unwrap_or(f64::NAN)),
                None => println!("no epochs run; wrote initial checkpoint"),
            }
        }
        Command::Eval { checkpoint, split } => {
            let (json, result) = cmd_eval(&cfg, checkpoint.as_deref(), split)?;
            println!("{json}");
            result?;
        }
        Command::Rollout { checkpoint, volume } => {
            let r = cmd_rollout(&cfg, checkpoint.as_deref(), volume)?;
            if cli.verbose {
                match r.blocks {
                    Some(n) => eprintln!("hierarchical rollout over {n} blocks"),
                    None => eprintln!("flat rollout"),
                }
            }
            println!("{}", r.files.volume.display());
            for s in &r.files.slices {
                println!("{}", s.display());
            }
        }
    }
    Ok(())
}
