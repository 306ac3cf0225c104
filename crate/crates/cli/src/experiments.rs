//! The six experiments. Each returns fits, scalar metrics and CSV rows;
//! assertions are derived afterwards from the `expect.*` keys.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use quartic_core::birman::{
    build_m, classify, jn_invert_matrix, leading_coefficients, resonance_tune, scan_bracket, Classification, Potential,
    Tuned,
};
use quartic_core::fit::log_grid;
use quartic_core::kernels::{expansion_partial_sum, r0, BoundarySign};
use quartic_core::propagator::{
    free_kernel_many, weighted_norm, weighted_norm_derivative, Correction, Geometry, Propagator, PropagatorSample, Subtract,
};
use quartic_core::spectral::SpectralPoint;
use quartic_core::waves::{build_grid, RadialGrid};
use quartic_core::{fit_decay, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::report::{num, NamedFit, Table};
use crate::CliError;

type CMat = DMatrix<Complex64>;

#[derive(Debug, Default)]
pub struct Outcome {
    pub verdict: Option<String>,
    pub fits: Vec<NamedFit>,
    pub metrics: BTreeMap<String, f64>,
    pub details: serde_json::Value,
    pub table: Table,
}

impl Outcome {
    fn fit(&mut self, name: &str, samples: &[(f64, f64)]) -> Result<(), CliError> {
        self.fits.push(NamedFit { name: name.into(), fit: fit_decay(samples)? });
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.experiment {
        Experiment::Classify => classify_experiment(cfg),
        Experiment::FreeDecay => free_decay(cfg),
        Experiment::PerturbedDecay => perturbed_decay(cfg),
        Experiment::ResolventBounds => resolvent_bounds(cfg),
        Experiment::ExpansionCheck => expansion_check(cfg),
        Experiment::ResonanceTune => resonance_tune_experiment(cfg),
    }
}

pub fn grid(cfg: &ExperimentConfig) -> Result<Arc<RadialGrid>, CliError> {
    Ok(Arc::new(build_grid(cfg.grid.count, cfg.grid.r_max, cfg.potential.beta)?))
}

fn tune(cfg: &ExperimentConfig, base: &Potential, ell: usize, grid: &Arc<RadialGrid>) -> Result<(Potential, Tuned), CliError> {
    let sign = base.coupling.signum();
    if base.coupling == 0.0 {
        return Err(CliError::Config("critical coupling search needs a nonzero potential.coupling (its sign is kept)".into()));
    }
    let family = |c: f64| base.with_coupling(sign * c);
    let bracket = scan_bracket(&family, ell, grid, cfg.tune_c0, cfg.tune_factor, 200)?;
    let tuned = resonance_tune(&family, ell, bracket, grid, cfg.tol.tune)?;
    Ok((base.with_coupling(sign * tuned.c_star), tuned))
}

/// The configured potential, with its coupling replaced by the critical one
/// when `potential.critical_ell` is set.
pub fn potential(cfg: &ExperimentConfig, grid: &Arc<RadialGrid>) -> Result<(Potential, Option<Tuned>), CliError> {
    let base = cfg.potential.base()?;
    match cfg.potential.critical_ell {
        Some(ell) => {
            let (p, t) = tune(cfg, &base, ell, grid)?;
            Ok((p, Some(t)))
        }
        None => Ok((base, None)),
    }
}

fn verdict_name(v: Verdict) -> String {
    serde_json::to_value(v).ok().and_then(|x| x.as_str().map(str::to_string)).unwrap_or_default()
}

fn classification_metrics(cls: &Classification, out: &mut Outcome) {
    let gap = cls.sectors.iter().filter_map(|s| s.gap_ratio).fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        out.metrics.insert("gap_ratio".into(), gap);
    }
    let overlap = cls.s1_basis.iter().chain(&cls.s2_basis).map(|n| n.v_overlap.abs()).fold(0.0, f64::max);
    out.metrics.insert("v_overlap".into(), overlap);
    out.metrics.insert("null_dim".into(), cls.sectors.iter().map(|s| s.null_dim).sum::<usize>() as f64);
    out.verdict = Some(verdict_name(cls.verdict));
}

fn classify_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = grid(cfg)?;
    let (pot, tuned) = potential(cfg, &g)?;
    let cls = classify(&pot, &g, cfg.grid.ell_max, cfg.tol.null)?;
    let mut out = Outcome { table: Table::new(&["ell", "index", "singular_value"]), ..Default::default() };
    for s in &cls.sectors {
        for (i, sv) in s.smallest_singular_values.iter().enumerate() {
            out.table.rows.push(vec![s.ell.to_string(), i.to_string(), num(*sv)]);
        }
    }
    classification_metrics(&cls, &mut out);
    out.details = json!({ "potential": pot, "tuned": tuned, "classification": cls });
    Ok(out)
}

fn resonance_tune_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = grid(cfg)?;
    let base = cfg.potential.base()?;
    let (pot, tuned) = tune(cfg, &base, cfg.tune_ell, &g)?;
    let cls = classify(&pot, &g, cfg.grid.ell_max.max(cfg.tune_ell), cfg.tol.null)?;
    let mut out = Outcome { table: Table::new(&["ell", "c_star", "residual_eigenvalue", "bracket_lo", "bracket_hi"]), ..Default::default() };
    out.table.rows.push(vec![
        tuned.ell.to_string(),
        num(tuned.c_star),
        num(tuned.residual_eigenvalue),
        num(tuned.bracket[0]),
        num(tuned.bracket[1]),
    ]);
    classification_metrics(&cls, &mut out);
    out.metrics.insert("c_star".into(), tuned.c_star);
    out.metrics.insert("residual_eigenvalue".into(), tuned.residual_eigenvalue.abs());
    out.details = json!({ "potential": pot, "tuned": tuned, "classification": cls });
    Ok(out)
}

const SAMPLE_HEADER: [&str; 9] = ["t", "r", "r_prime", "cos_gamma", "re", "im", "abs", "correction", "est_error"];

fn sample_row(s: &PropagatorSample) -> Vec<String> {
    let g = s.geometry;
    let corr = match s.correction_subtracted {
        Correction::None => "none",
        Correction::F => "F",
        Correction::G => "G",
    };
    vec![
        num(s.t),
        num(g.r),
        num(g.r_prime),
        num(g.cos_gamma),
        num(s.value.re),
        num(s.value.im),
        num(s.value.norm()),
        corr.into(),
        num(s.est_error),
    ]
}

fn sup(samples: &[PropagatorSample]) -> f64 {
    samples.iter().map(|s| s.value.norm()).fold(0.0, f64::max)
}

fn free_decay(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let geoms: Vec<Geometry> = cfg.geometry.radii.iter().map(|&r| Geometry::new(r, 0.0, 1.0)).collect::<Result<_, _>>()?;
    let seps: Vec<f64> = geoms.iter().map(|g| g.separation()).collect();
    let ts = log_grid(cfg.window.lo, cfg.window.hi, cfg.window.samples);
    let per_t: Vec<Vec<PropagatorSample>> = ts
        .par_iter()
        .map(|&t| {
            let vals = free_kernel_many(t, &seps, cfg.tol.quad)?;
            Ok(geoms
                .iter()
                .zip(vals)
                .map(|(g, (value, est_error))| PropagatorSample { t, geometry: *g, value, correction_subtracted: Correction::None, est_error })
                .collect())
        })
        .collect::<Result<_, quartic_core::Error>>()?;
    let mut out = Outcome { table: Table::new(&SAMPLE_HEADER), ..Default::default() };
    out.table.rows = per_t.iter().flatten().map(sample_row).collect();
    let sups: Vec<(f64, f64)> = ts.iter().zip(&per_t).map(|(&t, s)| (t, sup(s))).collect();
    out.fit("sup_abs", &sups)?;
    out.details = json!({ "sup_abs": sups });
    Ok(out)
}

/// All pairs r ≤ r′ from the radii list, at every cos γ.
pub fn geometry_grid(radii: &[f64], cos_gamma: &[f64]) -> Result<Vec<Geometry>, CliError> {
    let mut v = Vec::new();
    for (i, &r) in radii.iter().enumerate() {
        for &rp in &radii[i..] {
            for &c in cos_gamma {
                v.push(Geometry::new(r, rp, c)?);
            }
        }
    }
    Ok(v)
}

fn perturbed_decay(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = grid(cfg)?;
    let (pot, tuned) = potential(cfg, &g)?;
    let mut prop = Propagator::new(pot, g, cfg.grid.ell_max, cfg.tol.null, cfg.eta_cap)?;
    prop.rel_tol = cfg.tol.quad;
    let geoms = geometry_grid(&cfg.geometry.radii, &cfg.geometry.cos_gamma)?;
    let table = prop.amplitudes(&geoms)?;
    let ts = log_grid(cfg.window.lo, cfg.window.hi, cfg.window.samples);
    let verdict = prop.verdict();
    let singular = cfg.subtract && !matches!(verdict, Verdict::Regular);
    let display_name = match verdict {
        Verdict::Resonance => "F",
        _ => "G",
    };

    struct Row {
        raw: Vec<PropagatorSample>,
        sub: Vec<PropagatorSample>,
        display: f64,
    }
    let rows: Vec<Row> = ts
        .par_iter()
        .map(|&t| {
            let raw = prop.evolution_kernel(t, &table, Subtract::None)?;
            let (sub, display) = if singular {
                let d = if verdict == Verdict::Resonance { prop.f_kernel(t, &table)? } else { prop.g_kernel(t, &table)? };
                (prop.evolution_kernel(t, &table, Subtract::Auto)?, d.iter().map(|z| z.norm()).fold(0.0, f64::max))
            } else {
                (Vec::new(), 0.0)
            };
            Ok(Row { raw, sub, display })
        })
        .collect::<Result<_, quartic_core::Error>>()?;

    let mut out = Outcome { table: Table::new(&SAMPLE_HEADER), ..Default::default() };
    for r in &rows {
        out.table.rows.extend(r.raw.iter().chain(&r.sub).map(sample_row));
    }
    let raw: Vec<(f64, f64)> = ts.iter().zip(&rows).map(|(&t, r)| (t, sup(&r.raw))).collect();
    out.fit("raw", &raw)?;
    let worst_err = rows.iter().flat_map(|r| r.raw.iter().chain(&r.sub)).map(|s| s.est_error).fold(0.0, f64::max);
    out.metrics.insert("max_est_error".into(), worst_err);
    let mut extra = json!({ "sup_raw": raw, "display": serde_json::Value::Null });
    if singular {
        let sub: Vec<(f64, f64)> = ts.iter().zip(&rows).map(|(&t, r)| (t, sup(&r.sub))).collect();
        let disp: Vec<(f64, f64)> = ts.iter().zip(&rows).map(|(&t, r)| (t, r.display)).collect();
        out.fit("subtracted", &sub)?;
        out.fit("display", &disp)?;
        extra["sup_subtracted"] = json!(sub);
        extra["sup_display"] = json!(disp);
        extra["display"] = json!(display_name);
    }
    out.verdict = Some(verdict_name(verdict));
    extra["potential"] = json!(prop.potential);
    extra["tuned"] = json!(tuned);
    extra["geometries"] = json!(geoms);
    extra["eta_cap"] = json!(prop.cache.eta_cap);
    out.details = extra;
    Ok(out)
}

fn resolvent_bounds(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = grid(cfg)?;
    let (pot, _) = potential(cfg, &g)?;
    let xs = log_grid(cfg.window.lo, cfg.window.hi, cfg.window.samples);
    let high = cfg.regime == "high";
    let norms: Vec<f64> = xs
        .par_iter()
        .map(|&x| {
            let p = if high { SpectralPoint::from_lambda(x)? } else { SpectralPoint::from_eta(x)? };
            let (s, sp) = (cfg.weight_s, cfg.weight_s_prime);
            if cfg.derivative {
                weighted_norm_derivative(BoundarySign::Plus, p, &pot, &g, cfg.grid.ell_max, s, sp, cfg.step)
            } else {
                weighted_norm(BoundarySign::Plus, p, &pot, &g, cfg.grid.ell_max, s, sp)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut out = Outcome { table: Table::new(if high { &["lambda", "norm"] } else { &["eta", "norm"] }), ..Default::default() };
    out.table.rows = xs.iter().zip(&norms).map(|(x, n)| vec![num(*x), num(*n)]).collect();
    let samples: Vec<(f64, f64)> = xs.iter().copied().zip(norms.iter().copied()).collect();
    out.fit("norm", &samples)?;
    out.details = json!({ "potential": pot, "abscissa": if high { "lambda" } else { "eta" }, "derivative": cfg.derivative });
    Ok(out)
}

fn expansion_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.mode.as_str() {
        "kernel" => {
            let etas = log_grid(cfg.window.lo, cfg.window.hi, cfg.window.samples);
            let r = cfg.expansion_r;
            let vals: Vec<f64> = etas
                .iter()
                .map(|&e| Ok((r0(BoundarySign::Plus, e, r) - expansion_partial_sum(BoundarySign::Plus, e, r, 4)?).norm()))
                .collect::<Result<_, quartic_core::Error>>()?;
            let mut out = Outcome { table: Table::new(&["eta", "remainder"]), ..Default::default() };
            out.table.rows = etas.iter().zip(&vals).map(|(e, v)| vec![num(*e), num(*v)]).collect();
            let s: Vec<(f64, f64)> = etas.iter().copied().zip(vals.iter().copied()).collect();
            out.fit("remainder", &s)?;
            out.details = json!({ "r": r, "order": 4 });
            Ok(out)
        }
        "inverse" => {
            let g = grid(cfg)?;
            let (pot, _) = potential(cfg, &g)?;
            let ell = cfg.expansion_ell;
            let cls = classify(&pot, &g, cfg.grid.ell_max.max(ell), cfg.tol.null)?;
            let exp = leading_coefficients(&cls, &pot, &g)?;
            let etas = log_grid(cfg.window.lo, cfg.window.hi, cfg.window.samples);
            let rows: Vec<(f64, f64)> = etas
                .par_iter()
                .map(|&e| {
                    let raw = build_m(BoundarySign::Plus, e, &pot, &g, ell)?.matrix;
                    let inv = raw.lu().try_inverse().ok_or_else(|| quartic_core::Error::Singular(format!("M at η = {e}")))?;
                    let defl = exp.deflated_m(BoundarySign::Plus, e, &pot, &g, ell)?;
                    let dinv = defl.lu().try_inverse().ok_or_else(|| quartic_core::Error::Singular(format!("deflated M at η = {e}")))?;
                    Ok((inv.norm(), (dinv - exp.sectors[ell].leading(e, BoundarySign::Plus)).norm()))
                })
                .collect::<Result<_, quartic_core::Error>>()?;
            let mut out = Outcome { table: Table::new(&["eta", "inverse_norm", "remainder"]), ..Default::default() };
            out.table.rows = etas.iter().zip(&rows).map(|(e, (a, b))| vec![num(*e), num(*a), num(*b)]).collect();
            let norms: Vec<(f64, f64)> = etas.iter().zip(&rows).map(|(&e, r)| (e, r.0)).collect();
            let rem: Vec<(f64, f64)> = etas.iter().zip(&rows).map(|(&e, r)| (e, r.1)).collect();
            out.fit("inverse_norm", &norms)?;
            out.fit("remainder", &rem)?;
            classification_metrics(&cls, &mut out);
            out.details = json!({ "potential": pot, "ell": ell, "case": exp.case });
            Ok(out)
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (n, k) = (cfg.size, cfg.rank);
            let mut out = Outcome { table: Table::new(&["trial", "relative_error"]), ..Default::default() };
            let mut worst: f64 = 0.0;
            for trial in 0..cfg.trials {
                let m = random_matrix(&mut rng, n) + CMat::identity(n, n) * Complex64::new(2.0, 0.0);
                let s = random_projection(&mut rng, n, k);
                let direct = m.clone().lu().try_inverse().ok_or_else(|| quartic_core::Error::Singular("random system".into()))?;
                let jn = jn_invert_matrix(&m, &s)?;
                let err = (jn - &direct).norm() / direct.norm();
                worst = worst.max(err);
                out.table.rows.push(vec![trial.to_string(), num(err)]);
            }
            out.metrics.insert("max_relative_error".into(), worst);
            out.details = json!({ "size": n, "rank": k, "trials": cfg.trials });
            Ok(out)
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

/// Orthogonal projection onto k random orthonormal directions.
fn random_projection(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CMat {
    let q = random_matrix(rng, n).qr().q();
    let qk = q.columns(0, k).into_owned();
    &qk * qk.adjoint()
}
