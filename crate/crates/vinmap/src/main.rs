use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vinmap::config::{ConfigError, Overrides, PipelineConfig};
use vinmap::formats;
use vinmap::pipeline::{self, PipelineError, Stage};

/// Vineyard surface allocation and harvest valuation from marginal totals.
#[derive(Parser)]
#[command(name = "vinmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML). Without it the defaults apply.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Base seed for the random starts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of random starts.
    #[arg(long, global = true)]
    k_starts: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Harvest year n; yields are averaged over n-5..n-1.
    #[arg(long, global = true)]
    harvest_year: Option<u16>,
}

#[derive(Subcommand)]
enum Command {
    /// All stages from ingest to value.
    Run {
        /// Generate, recover and score a synthetic instance instead.
        #[arg(long)]
        synth: bool,
    },
    Ingest,
    Link,
    Yields,
    Solve {
        /// Directory holding a problem triple; defaults to the ingest output.
        #[arg(long)]
        problem: Option<PathBuf>,
    },
    Validate {
        /// Compare these solution files instead of the solve stage's starts.
        #[arg(long, num_args = 2..)]
        solutions: Vec<PathBuf>,
    },
    Value,
    Synth,
}

fn load(common: &Common) -> Result<PipelineConfig, ConfigError> {
    let overrides = Overrides {
        seed_base: common.seed,
        k_starts: common.k_starts,
        output_dir: common.out.clone(),
        harvest_year: common.harvest_year,
    };
    match &common.config {
        Some(p) => PipelineConfig::load(p, &overrides),
        None => {
            let mut cfg = PipelineConfig::from_toml("", "defaults")?;
            cfg.apply(&overrides);
            cfg.check()?;
            Ok(cfg)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load(&cli.common)?;
    match &cli.command {
        Command::Run { synth: false } => pipeline::run_pipeline(&cfg),
        Command::Run { synth: true } | Command::Synth => pipeline::run_synth(&cfg).map(|_| ()),
        Command::Ingest => pipeline::run_ingest(&cfg),
        Command::Link => pipeline::run_link(&cfg),
        Command::Yields => pipeline::run_yields(&cfg),
        Command::Solve { problem } => pipeline::run_solve_from(&cfg, problem.as_deref()),
        Command::Validate { solutions } if solutions.is_empty() => pipeline::run_validate(&cfg),
        Command::Validate { solutions } => {
            let stage = Stage::Validate;
            let wrap = |source| PipelineError::Stage { stage, source };
            let report =
                pipeline::compare_solution_files(solutions, cfg.validate.restrict_min_hectares)
                    .map_err(wrap)?;
            let path = pipeline::Layout::new(&cfg.output_dir)
                .validate_dir()
                .join("solutions.json");
            formats::write_json(&path, &report).map_err(|e| wrap(e.into()))
        }
        Command::Value => pipeline::run_value(&cfg),
    }
}

fn main() -> ExitCode {
    // usage errors are configuration errors
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vinmap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
