//! Command-line definitions and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::sweep::SweepKind;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "v2v", version, about = "Cooperative V2V perception and forecasting simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lambda=3000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration with default sources and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test scenario files and a manifest.
    Gen {
        /// Replace an existing non-empty dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Run one training stage, or all of them in order.
    Train {
        /// pretrain | finetune_fusion | train_temporal | train_codec | all
        #[arg(long, default_value = "all")]
        stage: String,
    },
    /// Evaluate strategies on the test split.
    Eval {
        /// Comma-separated: none, raw, output, feature, mixed, or all.
        #[arg(long, default_value = "none,raw,output,feature")]
        strategy: String,
        /// Also write every received message to a replayable dump.
        #[arg(long)]
        dump: bool,
    },
    /// Run an experiment sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
    },
    /// Payload sizes and distortion of every codec on test frames.
    CodecBench {
        /// Number of test frames to measure (0 = all).
        #[arg(long, default_value_t = 0)]
        frames: usize,
    },
    /// Re-fuse a message dump written by `eval --dump`.
    Replay {
        /// Dump index written by `eval --dump`.
        #[arg(long)]
        dump: PathBuf,
    },
}

/// Resolves the configuration and runs the selected command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let mut sets = c.sets.clone();
    if let Some(s) = c.seed {
        sets.push(format!("seed={s}"));
    }
    if let Some(o) = &c.out {
        sets.push(format!("out={}", toml::Value::String(o.display().to_string())));
    }
    let cfg = RunConfig::load(c.config.as_deref(), &sets)?;
    if c.print_config {
        print!("{}", cfg.documented_toml());
        return Ok(());
    }
    let Some(cmd) = cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    match cmd {
        Command::Gen { force } => crate::gen::cmd_gen(&cfg, force).map(|_| ()),
        Command::Train { stage } => crate::train::cmd_train(&cfg, &stage),
        Command::Eval { strategy, dump } => crate::eval::cmd_eval(&cfg, &crate::eval::parse_strategies(&strategy)?, dump).map(|_| ()),
        Command::Sweep { kind } => crate::sweep::cmd_sweep(&cfg, kind),
        Command::CodecBench { frames } => crate::bench::cmd_codec_bench(&cfg, frames),
        Command::Replay { dump } => crate::replay::cmd_replay(&cfg, &dump),
    }
}
