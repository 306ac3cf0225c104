//! Flat `dotted.key = value` configuration.
//!
//! One key per line, `#` starts a comment. Unknown keys are rejected so a
//! typo cannot silently fall back to a default. [`ExperimentConfig::to_text`]
//! writes every key in sorted order, which is the normalized form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use quartic_core::birman::{Potential, Profile};

use crate::CliError;

/// Parsed key/value pairs in key order.
pub type Document = BTreeMap<String, String>;

pub fn parse_document(text: &str) -> Result<Document, CliError> {
    let mut doc = Document::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let valid_key = !k.is_empty() && k.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        if !valid_key {
            return Err(CliError::Config(format!("line {}: malformed key `{k}`", no + 1)));
        }
        if doc.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Classify,
    FreeDecay,
    PerturbedDecay,
    ResolventBounds,
    ExpansionCheck,
    ResonanceTune,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Classify,
        Experiment::FreeDecay,
        Experiment::PerturbedDecay,
        Experiment::ResolventBounds,
        Experiment::ExpansionCheck,
        Experiment::ResonanceTune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Classify => "classify",
            Experiment::FreeDecay => "free-decay",
            Experiment::PerturbedDecay => "perturbed-decay",
            Experiment::ResolventBounds => "resolvent-bounds",
            Experiment::ExpansionCheck => "expansion-check",
            Experiment::ResonanceTune => "resonance-tune",
        }
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Potential as written in a config: a named profile plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    /// zero | gaussian | exponential | polynomial-decay
    pub profile: String,
    pub width: f64,
    pub rate: f64,
    pub exponent: f64,
    pub beta: f64,
    pub coupling: f64,
    /// When set, the coupling magnitude is replaced by the critical coupling
    /// of this sector (found by bisection), keeping the sign of `coupling`.
    pub critical_ell: Option<usize>,
}

impl PotentialSpec {
    pub fn base(&self) -> Result<Potential, CliError> {
        let profile = match self.profile.as_str() {
            "zero" => Profile::Zero,
            "gaussian" => Profile::Gaussian { width: self.width },
            "exponential" => Profile::Exponential { rate: self.rate },
            "polynomial-decay" => Profile::PolynomialDecay { exponent: self.exponent },
            other => return Err(CliError::Config(format!("unknown profile `{other}`"))),
        };
        let coupling = if profile == Profile::Zero { 0.0 } else { self.coupling };
        Ok(Potential::new(profile, self.beta, coupling)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub count: usize,
    /// None means the β-based default.
    pub r_max: Option<f64>,
    pub ell_max: usize,
}

/// `samples` log-spaced points on [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    pub radii: Vec<f64>,
    pub cos_gamma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative null-space threshold for classification.
    pub null: f64,
    /// Quadrature accuracy relative to the dispersive envelope.
    pub quad: f64,
    /// Stopping tolerance for critical-coupling searches.
    pub tune: f64,
}

/// Band on a fitted exponent: either `target ± band` or `≥ min`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Expectation {
    pub exponent: Option<f64>,
    pub band: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub potential: PotentialSpec,
    pub grid: GridSpec,
    pub window: Window,
    pub geometry: GeometrySpec,
    pub tol: Tolerances,
    pub eta_cap: f64,
    pub subtract: bool,
    /// high (λ window) or middle (η window)
    pub regime: String,
    pub derivative: bool,
    pub weight_s: f64,
    pub weight_s_prime: f64,
    pub step: f64,
    /// kernel | inverse | jensen-nenciu
    pub mode: String,
    pub expansion_r: f64,
    pub expansion_ell: usize,
    pub trials: usize,
    pub size: usize,
    pub rank: usize,
    pub tune_ell: usize,
    pub tune_c0: f64,
    pub tune_factor: f64,
    pub stem: Option<String>,
    pub expect_verdict: Option<String>,
    pub expect: BTreeMap<String, Expectation>,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            potential: PotentialSpec {
                profile: "gaussian".into(),
                width: 1.0,
                rate: 1.0,
                exponent: 6.0,
                beta: 20.0,
                coupling: -1.0,
                critical_ell: None,
            },
            grid: GridSpec { count: 40, r_max: Some(6.0), ell_max: 2 },
            window: Window { lo: 10.0, hi: 1000.0, samples: 7 },
            geometry: GeometrySpec { radii: vec![0.0, 0.5, 1.0, 1.5], cos_gamma: vec![1.0, -1.0] },
            tol: Tolerances { null: quartic_core::birman::DEFAULT_NULL_TOL, quad: quartic_core::propagator::DEFAULT_REL_TOL, tune: 1e-13 },
            eta_cap: quartic_core::propagator::DEFAULT_ETA_CAP,
            subtract: true,
            regime: "high".into(),
            derivative: false,
            weight_s: 2.0,
            weight_s_prime: 2.0,
            step: 1e-3,
            mode: "kernel".into(),
            expansion_r: 1.0,
            expansion_ell: 0,
            trials: 100,
            size: 30,
            rank: 3,
            tune_ell: 0,
            tune_c0: 1.0,
            tune_factor: 1.5,
            stem: None,
            expect_verdict: None,
            expect: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::from_document(&parse_document(text)?)
    }

    pub fn from_document(doc: &Document) -> Result<Self, CliError> {
        let mut r = Reader { doc, used: Vec::new() };
        let experiment: Experiment = r.req("experiment.name")?;
        let mut c = Self::defaults(experiment);
        r.opt("seed", &mut c.seed)?;
        r.opt("potential.profile", &mut c.potential.profile)?;
        r.opt("potential.width", &mut c.potential.width)?;
        r.opt("potential.rate", &mut c.potential.rate)?;
        r.opt("potential.exponent", &mut c.potential.exponent)?;
        r.opt("potential.beta", &mut c.potential.beta)?;
        r.opt("potential.coupling", &mut c.potential.coupling)?;
        c.potential.critical_ell = r.maybe("potential.critical_ell")?;
        r.opt("grid.count", &mut c.grid.count)?;
        if let Some(v) = r.raw("grid.r_max") {
            c.grid.r_max = if v == "auto" { None } else { Some(parse_value("grid.r_max", v)?) };
        }
        r.opt("grid.ell_max", &mut c.grid.ell_max)?;
        r.opt("window.lo", &mut c.window.lo)?;
        r.opt("window.hi", &mut c.window.hi)?;
        r.opt("window.samples", &mut c.window.samples)?;
        if let Some(v) = r.raw("geometry.radii") {
            c.geometry.radii = parse_list("geometry.radii", v)?;
        }
        if let Some(v) = r.raw("geometry.cos_gamma") {
            c.geometry.cos_gamma = parse_list("geometry.cos_gamma", v)?;
        }
        r.opt("tol.null", &mut c.tol.null)?;
        r.opt("tol.quad", &mut c.tol.quad)?;
        r.opt("tol.tune", &mut c.tol.tune)?;
        r.opt("propagator.eta_cap", &mut c.eta_cap)?;
        r.opt("propagator.subtract", &mut c.subtract)?;
        r.opt("resolvent.regime", &mut c.regime)?;
        r.opt("resolvent.derivative", &mut c.derivative)?;
        r.opt("resolvent.s", &mut c.weight_s)?;
        r.opt("resolvent.s_prime", &mut c.weight_s_prime)?;
        r.opt("resolvent.step", &mut c.step)?;
        r.opt("expansion.mode", &mut c.mode)?;
        r.opt("expansion.r", &mut c.expansion_r)?;
        r.opt("expansion.ell", &mut c.expansion_ell)?;
        r.opt("expansion.trials", &mut c.trials)?;
        r.opt("expansion.size", &mut c.size)?;
        r.opt("expansion.rank", &mut c.rank)?;
        r.opt("tune.ell", &mut c.tune_ell)?;
        r.opt("tune.c0", &mut c.tune_c0)?;
        r.opt("tune.factor", &mut c.tune_factor)?;
        c.stem = r.maybe("output.stem")?;
        c.expect_verdict = r.maybe("expect.verdict")?;
        for (k, v) in doc.range("expect.".to_string()..) {
            let Some(rest) = k.strip_prefix("expect.") else { break };
            if rest == "verdict" {
                continue;
            }
            let (name, field) = rest
                .rsplit_once('.')
                .ok_or_else(|| CliError::Config(format!("`{k}`: expected expect.<fit>.<exponent|band|min|max>")))?;
            let e = c.expect.entry(name.to_string()).or_default();
            let x: f64 = parse_value(k, v)?;
            match field {
                "exponent" => e.exponent = Some(x),
                "band" => e.band = Some(x),
                "min" => e.min = Some(x),
                "max" => e.max = Some(x),
                _ => return Err(CliError::Config(format!("`{k}`: unknown expectation field `{field}`"))),
            }
            r.used.push(k.clone());
        }
        if let Some(k) = doc.keys().find(|k| !r.used.contains(k)) {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let w = &self.window;
        if !(w.lo > 0.0 && w.hi > w.lo && w.hi.is_finite()) {
            return bad(format!("window must satisfy 0 < lo < hi, got [{}, {}]", w.lo, w.hi));
        }
        if w.samples < 5 {
            return bad(format!("window.samples must be at least 5, got {}", w.samples));
        }
        if self.grid.count < 8 {
            return bad(format!("grid.count must be at least 8, got {}", self.grid.count));
        }
        if self.geometry.radii.is_empty() || self.geometry.radii.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("geometry.radii must be a nonempty list of nonnegative numbers".into());
        }
        if self.geometry.cos_gamma.is_empty() || self.geometry.cos_gamma.iter().any(|c| !(c.abs() <= 1.0)) {
            return bad("geometry.cos_gamma entries must lie in [-1, 1]".into());
        }
        for (k, v) in [("tol.null", self.tol.null), ("tol.quad", self.tol.quad), ("tol.tune", self.tol.tune)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{k} must lie in (0, 1), got {v}"));
            }
        }
        if !["high", "middle"].contains(&self.regime.as_str()) {
            return bad(format!("resolvent.regime must be high or middle, got `{}`", self.regime));
        }
        if !["kernel", "inverse", "jensen-nenciu"].contains(&self.mode.as_str()) {
            return bad(format!("expansion.mode must be kernel, inverse or jensen-nenciu, got `{}`", self.mode));
        }
        if self.rank == 0 || self.rank >= self.size {
            return bad(format!("expansion.rank must lie in [1, size), got {} for size {}", self.rank, self.size));
        }
        if !(self.tune_factor > 1.0 && self.tune_c0 > 0.0) {
            return bad("tune.c0 must be positive and tune.factor above 1".into());
        }
        for (name, e) in &self.expect {
            if e.exponent.is_some() != e.band.is_some() {
                return bad(format!("expect.{name}: exponent and band go together"));
            }
            if e.exponent.is_none() && e.min.is_none() && e.max.is_none() {
                return bad(format!("expect.{name}: nothing to check"));
            }
        }
        self.potential.base()?;
        Ok(())
    }

    /// Every key, sorted; parsing the result gives back `self`.
    pub fn to_document(&self) -> Document {
        let mut d = Document::new();
        let mut put = |k: &str, v: String| {
            d.insert(k.to_string(), v);
        };
        put("experiment.name", self.experiment.as_str().into());
        put("seed", self.seed.to_string());
        let p = &self.potential;
        put("potential.profile", p.profile.clone());
        put("potential.width", p.width.to_string());
        put("potential.rate", p.rate.to_string());
        put("potential.exponent", p.exponent.to_string());
        put("potential.beta", p.beta.to_string());
        put("potential.coupling", p.coupling.to_string());
        if let Some(l) = p.critical_ell {
            put("potential.critical_ell", l.to_string());
        }
        put("grid.count", self.grid.count.to_string());
        put("grid.r_max", self.grid.r_max.map_or("auto".into(), |r| r.to_string()));
        put("grid.ell_max", self.grid.ell_max.to_string());
        put("window.lo", self.window.lo.to_string());
        put("window.hi", self.window.hi.to_string());
        put("window.samples", self.window.samples.to_string());
        put("geometry.radii", join(&self.geometry.radii));
        put("geometry.cos_gamma", join(&self.geometry.cos_gamma));
        put("tol.null", self.tol.null.to_string());
        put("tol.quad", self.tol.quad.to_string());
        put("tol.tune", self.tol.tune.to_string());
        put("propagator.eta_cap", self.eta_cap.to_string());
        put("propagator.subtract", self.subtract.to_string());
        put("resolvent.regime", self.regime.clone());
        put("resolvent.derivative", self.derivative.to_string());
        put("resolvent.s", self.weight_s.to_string());
        put("resolvent.s_prime", self.weight_s_prime.to_string());
        put("resolvent.step", self.step.to_string());
        put("expansion.mode", self.mode.clone());
        put("expansion.r", self.expansion_r.to_string());
        put("expansion.ell", self.expansion_ell.to_string());
        put("expansion.trials", self.trials.to_string());
        put("expansion.size", self.size.to_string());
        put("expansion.rank", self.rank.to_string());
        put("tune.ell", self.tune_ell.to_string());
        put("tune.c0", self.tune_c0.to_string());
        put("tune.factor", self.tune_factor.to_string());
        if let Some(s) = &self.stem {
            put("output.stem", s.clone());
        }
        if let Some(v) = &self.expect_verdict {
            put("expect.verdict", v.clone());
        }
        for (name, e) in &self.expect {
            for (field, v) in [("exponent", e.exponent), ("band", e.band), ("min", e.min), ("max", e.max)] {
                if let Some(v) = v {
                    put(&format!("expect.{name}.{field}"), v.to_string());
                }
            }
        }
        d
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_document() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn stem(&self) -> String {
        self.stem.clone().unwrap_or_else(|| self.experiment.as_str().to_string())
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

struct Reader<'a> {
    doc: &'a Document,
    used: Vec<String>,
}

impl Reader<'_> {
    fn raw(&mut self, key: &str) -> Option<&str> {
        let v = self.doc.get(key)?;
        self.used.push(key.to_string());
        Some(v)
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key).ok_or_else(|| CliError::Config(format!("missing `{key}`")))?;
        let v = v.to_string();
        v.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
    }

    fn opt<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), CliError> {
        if let Some(v) = self.raw(key) {
            *slot = parse_value(key, v)?;
        }
        Ok(())
    }

    fn maybe<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            Some(v) => Ok(Some(parse_value(key, v)?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_whitespace() {
        let doc = parse_document("# header\n\n  experiment.name = classify  # trailing\ngrid.count=24\n").unwrap();
        assert_eq!(doc["experiment.name"], "classify");
        assert_eq!(doc["grid.count"], "24");
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_document("no equals sign").is_err());
        assert!(parse_document("a..b = 1").is_err());
        assert!(parse_document("a = 1\na = 2").is_err());
        assert!(ExperimentConfig::parse("grid.count = 10").is_err());
        assert!(ExperimentConfig::parse("experiment.name = nope").is_err());
        assert!(ExperimentConfig::parse("experiment.name = classify\ngrid.cont = 10").is_err());
        assert!(ExperimentConfig::parse("experiment.name = classify\nwindow.lo = 5\nwindow.hi = 1").is_err());
        assert!(ExperimentConfig::parse("experiment.name = classify\nwindow.samples = 3").is_err());
        assert!(ExperimentConfig::parse("experiment.name = classify\npotential.profile = square").is_err());
        assert!(ExperimentConfig::parse("experiment.name = classify\nexpect.raw.exponent = -1").is_err());
    }

    #[test]
    fn round_trip_is_normalized() {
        let text = "experiment.name = perturbed-decay\nseed = 9\npotential.coupling = -2.5\npotential.critical_ell = 1\n\
                    grid.r_max = auto\ngeometry.radii = 0, 0.25,1\nexpect.raw.exponent = -0.5\nexpect.raw.band = 0.15\n\
                    expect.display.min = -2\nexpect.verdict = eigenvalue\noutput.stem = run1\n";
        let a = ExperimentConfig::parse(text).unwrap();
        assert_eq!(a.grid.r_max, None);
        assert_eq!(a.geometry.radii, vec![0.0, 0.25, 1.0]);
        let b = ExperimentConfig::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn round_trip_preserves_floats_exactly() {
        let mut c = ExperimentConfig::defaults(Experiment::FreeDecay);
        c.window = Window { lo: 0.1 + 0.2, hi: 1.0 / 3.0 * 1e5, samples: 15 };
        c.tol.quad = 7.000000000000001e-5;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back.window.lo.to_bits(), c.window.lo.to_bits());
        assert_eq!(back.window.hi.to_bits(), c.window.hi.to_bits());
        assert_eq!(back, c);
    }

    #[test]
    fn every_experiment_name_parses() {
        for e in Experiment::ALL {
            assert_eq!(e.as_str().parse::<Experiment>().unwrap(), e);
            let c = ExperimentConfig::defaults(e);
            assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
