//! Report emission: JSON summary, CSV samples and a timing sidecar.
//!
//! The JSON and CSV files depend only on the configuration, so reruns are
//! byte-identical. Anything that varies between runs (wall-clock time,
//! thread count) goes to `<stem>.timing.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use quartic_core::DecayFit;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct NamedFit {
    pub name: String,
    #[serde(flatten)]
    pub fit: DecayFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub config_echo: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub fits: Vec<NamedFit>,
    pub metrics: BTreeMap<String, f64>,
    pub assertions: Vec<Assertion>,
    pub details: serde_json::Value,
    pub versions: BTreeMap<String, String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn fit(&self, name: &str) -> Option<&DecayFit> {
        self.fits.iter().find(|f| f.name == name).map(|f| &f.fit)
    }
}

/// CSV rows, already formatted.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_s: f64,
    pub threads: usize,
}

pub struct Written {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub timing: PathBuf,
}

pub fn write_all(dir: &Path, stem: &str, report: &Report, table: &Table, timing: &Timing) -> std::io::Result<Written> {
    fs::create_dir_all(dir)?;
    let out = Written {
        json: dir.join(format!("{stem}.json")),
        csv: dir.join(format!("{stem}.csv")),
        timing: dir.join(format!("{stem}.timing.json")),
    };
    fs::write(&out.json, report.to_json())?;
    fs::write(&out.csv, table.to_csv())?;
    fs::write(&out.timing, serde_json::to_string_pretty(timing).expect("timing serializes") + "\n")?;
    Ok(out)
}
