//! `flowimage` — flow records to RGB images to CNN+LSTM classification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use flowimage::model::BackboneKind;
use flowimage::{Error, Result};

use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "flowimage", version, about = "DoS/DDoS flow classification via image encoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration file (JSON)
    #[arg(short, long)]
    config: PathBuf,
    /// Override the top-level seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the input CSV path
    #[arg(long)]
    input: Option<PathBuf>,
    /// Override the artifact directory
    #[arg(long)]
    workdir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(input) = &self.input {
            cfg.input_csv = input.clone();
        }
        if let Some(workdir) = &self.workdir {
            cfg.workdir = workdir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct BackboneArg {
    /// Restrict to one backbone (micro-xception, micro-inception, micro-resnet)
    #[arg(long)]
    backbone: Option<String>,
}

impl BackboneArg {
    fn resolve(&self, cfg: &PipelineConfig) -> Result<Vec<BackboneKind>> {
        match &self.backbone {
            Some(name) => Ok(vec![BackboneKind::from_str(name)?]),
            None => Ok(cfg.backbones.clone()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic flow-record CSV
    Synth {
        /// Output CSV path
        #[arg(short, long)]
        out: PathBuf,
        /// Records per class as "ddos,dos,others"
        #[arg(long, default_value = "4800,4800,4800")]
        counts: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw all classes from the same value ranges
        #[arg(long)]
        overlapping: bool,
    },
    /// Sample and label the raw CSV into the working dataset
    Ingest(ConfigArgs),
    /// Encode the sampled dataset into per-class image stores
    Featurize {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overwrite existing normalization statistics
        #[arg(long)]
        force: bool,
    },
    /// Train one or all configured backbones
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        backbone: BackboneArg,
        /// Override the epoch count
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a trained checkpoint on its validation split
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        backbone: BackboneArg,
        /// Carry LSTM state across images instead of sliding windows
        #[arg(long)]
        stateful: bool,
    },
    /// Rank trained backbones into a comparison table
    Report(ConfigArgs),
    /// Run ingest, featurize, train, evaluate and report in sequence
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overwrite existing normalization statistics
        #[arg(long)]
        force: bool,
    },
}

fn parse_counts(text: &str) -> Result<[u64; 3]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "--counts expects three comma-separated numbers, got '{text}'"
        )));
    }
    let mut counts = [0u64; 3];
    for (i, p) in parts.iter().enumerate() {
        counts[i] = p
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("invalid count '{p}'")))?;
    }
    Ok(counts)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            counts,
            seed,
            overlapping,
        } => commands::cmd_synth(&out, parse_counts(&counts)?, seed, overlapping),
        Command::Ingest(args) => commands::cmd_ingest(&args.load()?),
        Command::Featurize { config, force } => commands::cmd_featurize(&config.load()?, force),
        Command::Train {
            config,
            backbone,
            epochs,
        } => {
            let mut cfg = config.load()?;
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            for b in backbone.resolve(&cfg)? {
                commands::cmd_train(&cfg, b)?;
            }
            Ok(())
        }
        Command::Evaluate {
            config,
            backbone,
            stateful,
        } => {
            let mut cfg = config.load()?;
            if stateful {
                cfg.stateful_eval = true;
            }
            for b in backbone.resolve(&cfg)? {
                commands::cmd_evaluate(&cfg, b)?;
            }
            Ok(())
        }
        Command::Report(args) => commands::cmd_report(&args.load()?),
        Command::Pipeline { config, force } => commands::cmd_pipeline(&config.load()?, force),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
