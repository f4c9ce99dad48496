use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recpipe_core::pipeline::{self, PipelineConfig};
use recpipe_core::{Error, Result};

#[derive(Parser)]
#[command(name = "recpipe", version, about = "Session-based next-item recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus to the configured input paths.
    Synth(Common),
    /// Build counters, embeddings, candidates and feature files.
    Build(Common),
    /// Train the ranker on the training feature file.
    Train(Common),
    /// Rank the test candidates with the trained model.
    Predict(Common),
    /// Score predictions against the test truth.
    Eval(Common),
    /// Print the top features by gain.
    Importance(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed. Required by synth and train unless the
    /// config sets one.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    train_locales: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    eval_locales: Option<Vec<String>>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(l) = &self.train_locales {
            cfg.train_locales = l.clone();
        }
        if let Some(l) = &self.eval_locales {
            cfg.eval_locales = l.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(c) => pipeline::cmd_synth(&c.load()?),
        Command::Build(c) => pipeline::cmd_build(&c.load()?),
        Command::Train(c) => pipeline::cmd_train(&c.load()?),
        Command::Predict(c) => pipeline::cmd_predict(&c.load()?),
        Command::Eval(c) => {
            let report = pipeline::cmd_eval(&c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            Ok(())
        }
        Command::Importance(c) => {
            print!("{}", pipeline::cmd_importance(&c.load()?)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
