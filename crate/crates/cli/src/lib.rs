//! Batch driver for the quartic-core experiments.
// `!(x >= y)` is how NaN gets rejected along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use std::collections::BTreeMap;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig};
pub use report::{Assertion, Report, Table};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "QUARTIC_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] quartic_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(quartic_core::Error::Domain(_)) => "domain",
            CliError::Core(quartic_core::Error::Convergence { .. }) => "convergence",
            CliError::Core(quartic_core::Error::Truncation { .. }) => "truncation",
            CliError::Core(quartic_core::Error::Singular(_)) => "singular",
            CliError::Core(quartic_core::Error::Bracket(_)) => "bracket",
            CliError::Core(quartic_core::Error::ExpansionMismatch(_)) => "expansion_mismatch",
            CliError::Core(quartic_core::Error::Precondition(_)) => "precondition",
            CliError::Core(quartic_core::Error::Fit(_)) => "fit",
            CliError::Core(quartic_core::Error::Format(_)) => "format",
            CliError::Core(quartic_core::Error::Io(_)) | CliError::Io(_) => "io",
            CliError::Pool(_) => "thread_pool",
        }
    }
}

/// Runs the experiment and assembles its report; nothing is written.
pub fn run(cfg: &ExperimentConfig) -> Result<(Report, Table), CliError> {
    let out = experiments::run(cfg)?;
    let assertions = assertions(cfg, &out);
    let report = Report {
        experiment: cfg.experiment.as_str().into(),
        config_echo: cfg.to_document(),
        verdict: out.verdict,
        fits: out.fits,
        metrics: out.metrics,
        assertions,
        details: out.details,
        versions: versions(),
    };
    Ok((report, out.table))
}

/// [`run`] inside a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<(Report, Table), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    pool.install(|| run(cfg))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("quartic-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("quartic-core".to_string(), quartic_core::VERSION.to_string()),
        ("schema".to_string(), quartic_core::birman::SCHEMA_VERSION.to_string()),
    ])
}

fn assertions(cfg: &ExperimentConfig, out: &experiments::Outcome) -> Vec<Assertion> {
    let mut v = Vec::new();
    if let Some(want) = &cfg.expect_verdict {
        let got = out.verdict.clone().unwrap_or_else(|| "none".into());
        v.push(Assertion { name: "verdict".into(), pass: &got == want, detail: format!("got {got}, expected {want}") });
    }
    for (name, e) in &cfg.expect {
        let (value, what, note) = if let Some(f) = out.fits.iter().find(|f| &f.name == name) {
            let note = if f.fit.unreliable { format!(", unreliable fit (residual {:.3})", f.fit.residual) } else { String::new() };
            (f.fit.exponent, "exponent", note)
        } else if let Some(m) = out.metrics.get(name) {
            (*m, "value", String::new())
        } else {
            v.push(Assertion { name: name.clone(), pass: false, detail: "no fit or metric with this name".into() });
            continue;
        };
        let mut pass = value.is_finite();
        let mut parts = Vec::new();
        if let (Some(x), Some(b)) = (e.exponent, e.band) {
            pass &= (value - x).abs() <= b;
            parts.push(format!("within {x:?} ± {b:?}"));
        }
        if let Some(m) = e.min {
            pass &= value >= m;
            parts.push(format!(">= {m:?}"));
        }
        if let Some(m) = e.max {
            pass &= value <= m;
            parts.push(format!("<= {m:?}"));
        }
        v.push(Assertion { name: name.clone(), pass, detail: format!("{what} {} (need {}){note}", show(value), parts.join(", ")) });
    }
    v
}

/// Fixed-point for ordinary magnitudes, scientific otherwise.
fn show(x: f64) -> String {
    if x == 0.0 || (1e-3..1e5).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.3e}")
    }
}
