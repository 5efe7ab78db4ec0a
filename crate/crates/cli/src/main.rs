use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use knowshap::reporting::{
    cmd_attribute, cmd_experiment, emit_report, render_ranking, replay_paper, ExitStatus,
    MethodChoice,
};
use knowshap::testbed::ExperimentSpec;

/// Shapley attribution of learning-performance improvement to pieces of
/// domain knowledge.
#[derive(Parser)]
#[command(name = "knowshap", version)]
struct Cli {
    /// Worker threads for coalition evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Permutation,
    #[value(alias = "monte-carlo")]
    Mc,
}

#[derive(Subcommand)]
enum Command {
    /// Attribute a complete value table (JSON, or CSV with `members,value`).
    Attribute {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        method: MethodArg,
        /// Sampled orderings for `--method mc`.
        #[arg(long, default_value_t = 10_000)]
        iters: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; a manifest line is appended next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every needed coalition and attribute the improvement.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Attribute an embedded accuracy table: mnist, mnist-imperfect or cifar10.
    ReplayPaper {
        #[arg(long)]
        table: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default synthetic experiment config.
    DefaultConfig {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<ExitStatus> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Attribute {
            table,
            method,
            iters,
            seed,
            out,
        } => {
            let method = match method {
                MethodArg::Exact => MethodChoice::Exact,
                MethodArg::Permutation => MethodChoice::Permutation,
                MethodArg::Mc => MethodChoice::MonteCarlo { iters, seed },
            };
            let report = cmd_attribute(&table, &method, out.as_deref())
                .with_context(|| format!("attributing {}", table.display()))?;
            write!(
                stdout,
                "{}",
                render_ranking(&table.display().to_string(), &report, None)
            )?;
            Ok(report.exit_status())
        }
        Command::Experiment { config, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let spec = ExperimentSpec::from_json_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            let result = cmd_experiment(&spec, &out)?;
            match &result.report {
                Some(r) => write!(stdout, "{}", render_ranking("experiment", r, None))?,
                None => writeln!(
                    stdout,
                    "experiment incomplete; see {}",
                    out.join("diagnostics.json").display()
                )?,
            }
            for o in result.outcomes.iter().filter(|o| o.error().is_some()) {
                log::error!(
                    "coalition {} failed: {}",
                    o.coalition,
                    o.error().unwrap_or_default()
                );
            }
            Ok(result.status)
        }
        Command::ReplayPaper { table, out } => {
            let started = Instant::now();
            let (mut report, raw, stats) = replay_paper(&table)?;
            if let Some(out) = out {
                let config =
                    serde_json::json!({ "fixture": table, "attribution": { "method": "exact" } });
                emit_report(&mut report, &out, config, 0, stats, started)?;
            }
            write!(stdout, "{}", render_ranking(&table, &report, Some(&raw)))?;
            Ok(report.exit_status())
        }
        Command::DefaultConfig { seed } => {
            writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&ExperimentSpec::default_synthetic(seed))?
            )?;
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ExitStatus::InputError.code() as u8)
        }
    }
}
