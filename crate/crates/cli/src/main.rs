use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use quartic_cli::report::{write_all, Timing};
use quartic_cli::{run_with_threads, CliError, Experiment, ExperimentConfig, THREADS_ENV};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Classify,
    FreeDecay,
    PerturbedDecay,
    ResolventBounds,
    ExpansionCheck,
    ResonanceTune,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Classify => Experiment::Classify,
            Command::FreeDecay => Experiment::FreeDecay,
            Command::PerturbedDecay => Experiment::PerturbedDecay,
            Command::ResolventBounds => Experiment::ResolventBounds,
            Command::ExpansionCheck => Experiment::ExpansionCheck,
            Command::ResonanceTune => Experiment::ResonanceTune,
        }
    }
}

/// Run one numerical experiment and write <stem>.json, <stem>.csv and
/// <stem>.timing.json. Exits 0 iff every configured assertion passes.
#[derive(Debug, Parser)]
#[command(name = "quartic", version)]
struct Args {
    #[arg(value_enum)]
    experiment: Command,
    /// Config file; without one the experiment's defaults are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: $QUARTIC_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn main_inner(args: Args) -> Result<bool, CliError> {
    let experiment: Experiment = args.experiment.into();
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::parse(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::defaults(experiment),
    };
    if cfg.experiment != experiment {
        return Err(CliError::Config(format!(
            "config is for `{}` but the subcommand is `{}`",
            cfg.experiment.as_str(),
            experiment.as_str()
        )));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let n = threads(args.threads)?;
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let clock = Instant::now();
    let (report, table) = run_with_threads(&cfg, n)?;
    let timing = Timing { started_unix_ms: started, elapsed_s: clock.elapsed().as_secs_f64(), threads: n };
    let written = write_all(&args.out, &cfg.stem(), &report, &table, &timing)?;
    for a in &report.assertions {
        println!("{} {}: {}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    println!("wrote {}", written.json.display());
    Ok(report.passed())
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let diag = serde_json::json!({ "error": e.kind(), "detail": e.to_string() });
            eprintln!("{diag}");
            ExitCode::from(2)
        }
    }
}
