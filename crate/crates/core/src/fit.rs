//! Least-squares power-law fits in log-log coordinates.

use serde::Serialize;

use crate::error::{Error, Result};

/// Fits above this max log-residual are flagged.
pub const UNRELIABLE_RESIDUAL: f64 = 0.5;

/// value ≈ prefactor · abscissa^exponent over `window`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// ln(prefactor), the intercept of the log-log line.
    pub intercept: f64,
    /// Largest absolute residual in natural-log units.
    pub residual: f64,
    pub window: [f64; 2],
    pub n_samples: usize,
    pub unreliable: bool,
}

pub fn fit_decay(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 5 {
        return Err(Error::Fit(format!("need at least 5 samples, got {}", samples.len())));
    }
    for &(x, y) in samples {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Domain(format!("abscissa must be positive, got {x}")));
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Domain(format!("sample values must be positive, got {y} at {x}")));
        }
    }
    let n = samples.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in samples {
        sx += x.ln();
        sy += y.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in samples {
        let dx = x.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (y.ln() - my);
    }
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = samples
        .iter()
        .map(|&(x, y)| (y.ln() - intercept - slope * x.ln()).abs())
        .fold(0.0, f64::max);
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    Ok(DecayFit {
        exponent: slope,
        prefactor: intercept.exp(),
        intercept,
        residual,
        window: [lo, hi],
        n_samples: samples.len(),
        unreliable: residual > UNRELIABLE_RESIDUAL,
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}
