//! Experiment runner: JSON configs merged over bundled per-experiment
//! defaults, a registry of named experiments, JSON reports with CSV series,
//! and baseline comparison.

mod config;
mod experiments;
mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

pub use config::{
    ExperimentConfig, LatticeConfig, McConfig, ModelConfig, OutputConfig, OutputFormat,
    TimeConfig,
};
pub use experiments::{registry, ExperimentDef};
pub use report::{
    compare_reports, BaselineDiff, ExperimentReport, Metric, Series, CSV_SCHEMA_VERSION,
    REPORT_SCHEMA_VERSION,
};

use crate::error::{LabError, Result};

/// Exit code when every pass flag is true.
pub const EXIT_PASS: i32 = 0;
/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit code when at least one metric fails.
pub const EXIT_FAIL: i32 = 2;

/// Environment variable giving the default worker count.
pub const THREADS_ENV: &str = "SGLAB_THREADS";

#[derive(Parser, Debug)]
#[command(name = "sglab", version, about = "Sine-Gordon pseudospectral verification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment from a JSON config file or a bundled default name.
    Run {
        /// Path to a config file, or the name of a bundled experiment.
        config: String,
        /// Output directory (overrides output.directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides mc.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, env = THREADS_ENV)]
        threads: Option<usize>,
    },
    /// List the registered experiments.
    List,
    /// Print the bundled default config of an experiment.
    Show { name: String },
    /// Regression baselines.
    Baseline {
        #[command(subcommand)]
        command: BaselineCommand,
    },
}

#[derive(Subcommand, Debug)]
enum BaselineCommand {
    /// Compare two reports metric by metric.
    Compare {
        old: PathBuf,
        new: PathBuf,
        /// Relative tolerance on metric values.
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
    },
}

/// Entry point of the `sglab` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let text = load_config_text(&config)?;
            let mut cfg = ExperimentConfig::resolve(&text)?;
            if let Some(s) = seed {
                cfg.mc.seed = Some(s);
            }
            if let Some(dir) = out {
                cfg.output.directory = Some(dir.to_string_lossy().into_owned());
            }
            let report = run_with_threads(&cfg, threads)?;
            let dir = PathBuf::from(cfg.output.directory.clone().unwrap_or_else(|| ".".into()));
            let files = report.write(&dir, &cfg.output.formats)?;
            for m in &report.metrics {
                println!("{}", m.summary_line());
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            let verdict = if report.pass { "PASS" } else { "FAIL" };
            println!(
                "{}: {verdict} ({:.1} s)",
                report.experiment, report.wall_clock_seconds
            );
            Ok(if report.pass { EXIT_PASS } else { EXIT_FAIL })
        }
        Command::List => {
            print!("{}", list_text());
            Ok(EXIT_PASS)
        }
        Command::Show { name } => {
            let def = find(&name)?;
            print!("{}", def.default_config);
            Ok(EXIT_PASS)
        }
        Command::Baseline {
            command: BaselineCommand::Compare { old, new, rel_tol },
        } => {
            let a = ExperimentReport::load(&old)?;
            let b = ExperimentReport::load(&new)?;
            let diff = compare_reports(&a, &b, rel_tol)?;
            for line in &diff.lines {
                println!("{line}");
            }
            println!(
                "{} changed, {} regressed, {} missing",
                diff.changed, diff.regressed, diff.missing
            );
            Ok(if diff.is_clean() { EXIT_PASS } else { EXIT_FAIL })
        }
    }
}

fn find(name: &str) -> Result<&'static ExperimentDef> {
    registry().iter().find(|d| d.name == name).ok_or_else(|| {
        LabError::Config(format!(
            "unknown experiment `{name}` (see `sglab list`)"
        ))
    })
}

/// A path to an existing file is read; otherwise a bundled experiment name
/// yields its default config.
fn load_config_text(arg: &str) -> Result<String> {
    let p = Path::new(arg);
    if p.is_file() {
        return Ok(std::fs::read_to_string(p)?);
    }
    if let Ok(def) = find(arg) {
        return Ok(def.default_config.to_string());
    }
    Err(LabError::Config(format!(
        "`{arg}` is neither a readable config file nor a bundled experiment"
    )))
}

/// Names and one-line descriptions, sorted by name.
pub fn list_text() -> String {
    let mut defs: Vec<&ExperimentDef> = registry().iter().collect();
    defs.sort_by_key(|d| d.name);
    let width = defs.iter().map(|d| d.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for d in defs {
        out.push_str(&format!(
            "{:width$}  {}\n{:width$}  checks: {}\n",
            d.name, d.summary, "", d.checks
        ));
    }
    out
}

/// The bundled default config of a registered experiment.
pub fn default_config(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::resolve(find(name)?.default_config)
}

/// Validate and run a resolved config on the current rayon pool.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let def = find(&cfg.experiment)?;
    let start = Instant::now();
    let outcome = (def.run)(cfg)?;
    Ok(ExperimentReport::assemble(
        cfg.clone(),
        outcome,
        start.elapsed().as_secs_f64(),
    ))
}

/// As [`run`], inside a dedicated pool of `threads` workers when given.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    match threads {
        None => run(cfg),
        Some(0) => Err(LabError::Config("--threads must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| LabError::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| run(cfg))
        }
    }
}
