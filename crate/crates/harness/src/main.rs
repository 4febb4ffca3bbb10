use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lrlab_harness::run::{report_command, stats_command};
use lrlab_harness::{run_experiment, run_sweep, Completion, ExperimentConfig, Result, RunOptions, SweepAxis};

/// Continual-learning experiments for a toy latent diffusion model.
#[derive(Parser)]
#[command(name = "lrlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method × seed) job of a config.
    Run(RunArgs),
    /// Run one experiment per point along an ablation axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// lambda, memory or task_order.
        #[arg(long)]
        axis: String,
    },
    /// Recompute significance tests from a results directory.
    Stats {
        #[arg(long, env = "LRLAB_OUT_DIR", default_value = "results")]
        out: PathBuf,
    },
    /// Rewrite curve data from a results directory.
    Report {
        #[arg(long, env = "LRLAB_OUT_DIR", default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides LRLAB_OUT_DIR and the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel jobs; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions)> {
        let config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let out_dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os("LRLAB_OUT_DIR").map(PathBuf::from))
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results"));
        let options = RunOptions {
            out_dir,
            jobs: self.jobs,
            seed_offset: self.seed_offset,
        };
        Ok((config, options))
    }
}

fn finish(completion: Completion, dir: &Path) -> ExitCode {
    match completion {
        Completion::Clean => {
            println!("results written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Completion::Partial => {
            eprintln!("some runs failed; see {}", dir.join("summary.md").display());
            ExitCode::from(2)
        }
    }
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let (config, options) = args.load()?;
            let outcome = run_experiment(&config, &options)?;
            Ok(finish(outcome.completion(), &options.out_dir))
        }
        Command::Sweep { run, axis } => {
            let axis: SweepAxis = axis.parse()?;
            let (config, options) = run.load()?;
            let outcome = run_sweep(&config, axis, &options)?;
            Ok(finish(outcome.completion(), &options.out_dir))
        }
        Command::Stats { out } => {
            let rows = stats_command(&out)?;
            let rejected = rows.iter().filter(|r| r.reject).count();
            println!("{} comparisons, {rejected} significant after correction", rows.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { out } => {
            let rows = report_command(&out)?;
            println!(
                "{} curve points written to {}",
                rows.len(),
                out.join("curves.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
