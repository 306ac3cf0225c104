//! Propagator kernels from Stone's formula.
//!
//! With λ = η⁴ + η² and R_V± = R₀± − R₀±v(M±)⁻¹vR₀±,
//! e^{−itH}P_ac(x, y) = (1/π) ∫₀^∞ e^{−itλ} Im R_V⁺(λ; x, y) dλ.
//! The free part is integrated in closed form; the correction is sampled
//! on Chebyshev panels in η (the [`SpectralCache`]) and integrated through
//! barycentric interpolation. Zero-energy singular parts are the Laurent
//! principal parts of (M⁺)⁻¹ from [`crate::birman::leading_coefficients`].

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::birman::{
    build_m_sectors, checked_inverse, classify, leading_coefficients, sample, Classification, ExpansionCoefficients,
    Potential, SectorExpansion, Verdict,
};
use crate::error::{domain, Error, Result};
use crate::kernels::{r0, BoundarySign};
use crate::oscillatory::{
    improper_tail_vec, integrate_phase, split_points, tail_to, TailEnvelope, Tolerance, DEFAULT_MAX_PANELS,
};
use crate::spectral::{jacobian_unchecked, SpectralPoint};
use crate::waves::{build_sector_operators, legendre_all, sector_rows, RadialGrid};

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometry {
    pub r: f64,
    pub r_prime: f64,
    pub cos_gamma: f64,
}

impl Geometry {
    pub fn new(r: f64, r_prime: f64, cos_gamma: f64) -> Result<Self> {
        if !(r >= 0.0 && r_prime >= 0.0 && r.is_finite() && r_prime.is_finite()) {
            return domain("radii must be finite and nonnegative");
        }
        if !(cos_gamma.abs() <= 1.0) {
            return domain(format!("cos γ must lie in [−1, 1], got {cos_gamma}"));
        }
        Ok(Self { r, r_prime, cos_gamma })
    }

    pub fn separation(&self) -> f64 {
        let (r, p) = (self.r, self.r_prime);
        // (r − r′)² + 2rr′(1 − cos γ) avoids cancellation near the diagonal
        ((r - p) * (r - p) + 2.0 * r * p * (1.0 - self.cos_gamma)).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    None,
    F,
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subtract {
    None,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagatorSample {
    pub t: f64,
    pub geometry: Geometry,
    pub value: Complex64,
    pub correction_subtracted: Correction,
    pub est_error: f64,
}

/// 0.02·min(t^{−3/4}, t^{−3/2}): a little above the free kernel's size at
/// the origin, used to scale absolute tolerances.
pub fn dispersive_envelope(t: f64) -> f64 {
    0.02 * t.powf(-0.75).min(t.powf(-1.5))
}

/// Default accuracy of propagator quadratures relative to [`dispersive_envelope`].
pub const DEFAULT_REL_TOL: f64 = 1e-4;

/// (1/π) Im R₀⁺ without the Jacobian: sin(ηs)/(4π²s(1+2η²)).
fn free_amplitude(eta: f64, s: f64) -> f64 {
    let sinc = if s == 0.0 { eta } else { (eta * s).sin() / s };
    sinc / (4.0 * PI * PI * (1.0 + 2.0 * eta * eta))
}

/// Envelope of [`free_amplitude`] and its first two η-derivatives for η ≥ 1.
fn free_envelope(s_max: f64) -> TailEnvelope {
    let k = 1.0 / (4.0 * PI * PI);
    TailEnvelope {
        valid_from: 1.0,
        c0: 0.5 * k,
        p0: 1.0,
        c1: 1.5 * k,
        p1: 2.0,
        c2: (0.5 * s_max + 7.0) * k,
        p2: 2.0,
        max_eta: f64::INFINITY,
    }
}

/// Free propagator kernel at every separation, as (value, error estimate).
pub fn free_kernel_many(t: f64, separations: &[f64], rel_tol: f64) -> Result<Vec<(Complex64, f64)>> {
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("t must be positive, got {t}"));
    }
    if separations.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return domain("separations must be finite and nonnegative");
    }
    if separations.is_empty() {
        return Ok(vec![]);
    }
    let s_max = separations.iter().cloned().fold(0.0, f64::max);
    let f = |eta: f64, out: &mut [Complex64]| {
        for (o, &s) in out.iter_mut().zip(separations) {
            *o = Complex64::new(free_amplitude(eta, s), 0.0);
        }
    };
    let tol = Tolerance { abs: rel_tol * dispersive_envelope(t), rel: rel_tol };
    let est = improper_tail_vec(&f, separations.len(), &free_envelope(s_max), t, 0.0, tol, DEFAULT_MAX_PANELS)?;
    let err = est.error();
    Ok(est.values.into_iter().map(|v| (v, err)).collect())
}

/// e^{−itH₀}(x, y) at |x − y| = `separation`.
pub fn free_kernel(t: f64, separation: f64) -> Result<Complex64> {
    Ok(free_kernel_many(t, &[separation], DEFAULT_REL_TOL)?[0].0)
}

/// Σ_ℓ (2ℓ+1)/(4π) P_ℓ(cos γ) for ℓ ≤ lmax.
fn sector_weights(lmax: usize, cos_gamma: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    legendre_all(lmax, cos_gamma, &mut p);
    p.iter().enumerate().map(|(l, pl)| (2 * l + 1) as f64 / (4.0 * PI) * pl).collect()
}

/// v-weighted R₀ sector rows: e_ℓ,i(r) = √w_i r_i v_i K_ℓ(r, r_i).
fn evaluation_vectors(sign: BoundarySign, eta: f64, r: f64, grid: &RadialGrid, v: &[f64], lmax: usize) -> Vec<DVector<Complex64>> {
    sector_rows(&|s| r0(sign, eta, s), lmax, r, grid, eta)
        .into_iter()
        .map(|row| DVector::from_iterator(row.len(), row.iter().zip(v).map(|(e, vi)| e * *vi)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventValue {
    pub value: Complex64,
    /// Size of the last retained sector term, a proxy for the ℓ-truncation error.
    pub truncation_estimate: f64,
}

/// R_V±(η⁴+η²; x, y) via the symmetric resolvent identity, sectors ℓ ≤ ell_max.
pub fn perturbed_resolvent(
    sign: BoundarySign,
    eta: f64,
    geometry: &Geometry,
    potential: &Potential,
    grid: &Arc<RadialGrid>,
    ell_max: usize,
) -> Result<ResolventValue> {
    let free = r0(sign, eta, geometry.separation());
    let s = sample(potential, grid)?;
    if s.v.iter().all(|&v| v == 0.0) {
        if !(eta >= 0.0 && eta.is_finite()) {
            return domain(format!("eta must be finite and nonnegative, got {eta}"));
        }
        return Ok(ResolventValue { value: free, truncation_estimate: 0.0 });
    }
    let ms = build_m_sectors(sign, eta, potential, grid, ell_max)?;
    let ex = evaluation_vectors(sign, eta, geometry.r, grid, &s.v, ell_max);
    let ey = evaluation_vectors(sign, eta, geometry.r_prime, grid, &s.v, ell_max);
    let wts = sector_weights(ell_max, geometry.cos_gamma);
    let mut corr = ZERO;
    let mut last = 0.0;
    for (l, m) in ms.iter().enumerate() {
        let inv = checked_inverse(&m.matrix, &format!("M in sector ℓ = {l}"))?;
        let term = ex[l].transpose() * (&inv * &ey[l]);
        let term = term[(0, 0)] * wts[l];
        corr += term;
        last = term.norm();
    }
    Ok(ResolventValue { value: free - corr, truncation_estimate: last })
}

/// First-kind Chebyshev nodes and barycentric weights on [a, b].
#[derive(Debug, Clone)]
struct ChebPanel {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebPanel {
    fn new(a: f64, b: f64, n: usize) -> Self {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        // ascending order
        for j in (0..n).rev() {
            let th = (2 * j + 1) as f64 * PI / (2 * n) as f64;
            nodes.push(c + h * th.cos());
            weights.push(if j % 2 == 0 { th.sin() } else { -th.sin() });
        }
        Self { a, b, nodes, weights }
    }

    /// Barycentric interpolation of `m` interleaved series: values[j*m + k].
    fn eval(&self, x: f64, values: &[f64], m: usize, out: &mut [f64]) {
        let mut den = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, (&xj, &wj)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let d = x - xj;
            if d == 0.0 {
                out.copy_from_slice(&values[j * m..(j + 1) * m]);
                return;
            }
            let q = wj / d;
            den += q;
            for k in 0..m {
                out[k] += q * values[j * m + k];
            }
        }
        out.iter_mut().for_each(|o| *o /= den);
    }
}

/// Chebyshev points per η-panel.
pub const NODES_PER_PANEL: usize = 16;
/// Default upper end of the tabulated energy range.
pub const DEFAULT_ETA_CAP: f64 = 6.0;

/// Panel edges: width 0.1 on [0, 1], 0.25 on [1, 4], 0.5 beyond.
pub fn cache_edges(eta_cap: f64) -> Vec<f64> {
    let mut e = vec![0.0];
    let mut x: f64 = 0.0;
    while x < eta_cap - 1e-12 {
        let w = if x < 1.0 - 1e-12 {
            0.1
        } else if x < 4.0 - 1e-12 {
            0.25
        } else {
            0.5
        };
        x = (x + w).min(eta_cap);
        // snap accumulated rounding onto the nominal grid
        x = (x * 1e9).round() / 1e9;
        e.push(x);
    }
    e
}

/// (M⁺(η⁴+η²))⁻¹ with v folded in, W = v(M⁺)⁻¹v, at every Chebyshev node,
/// every sector ℓ ≤ ell_max. Declared-zero T₀ eigenvalues are deflated.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    pub ell_max: usize,
    pub eta_cap: f64,
    panels: Vec<ChebPanel>,
    blocks: Vec<Vec<CMat>>,
}

impl SpectralCache {
    pub fn build(
        potential: &Potential,
        grid: &Arc<RadialGrid>,
        ell_max: usize,
        expansion: &ExpansionCoefficients,
        eta_cap: f64,
    ) -> Result<Self> {
        if !(eta_cap > 0.0 && eta_cap.is_finite()) {
            return domain(format!("eta_cap must be positive, got {eta_cap}"));
        }
        let edges = cache_edges(eta_cap);
        let panels: Vec<ChebPanel> = edges.windows(2).map(|w| ChebPanel::new(w[0], w[1], NODES_PER_PANEL)).collect();
        let nodes: Vec<f64> = panels.iter().flat_map(|p| p.nodes.iter().copied()).collect();
        let s = sample(potential, grid)?;
        let n = grid.count;
        let deflate: Vec<CMat> = (0..=ell_max).map(|l| expansion.deflation_matrix(l, n)).collect();
        let blocks = nodes
            .par_iter()
            .map(|&eta| {
                let ms = build_m_sectors(BoundarySign::Plus, eta, potential, grid, ell_max)?;
                ms.iter()
                    .enumerate()
                    .map(|(l, m)| {
                        let inv = checked_inverse(&(&m.matrix - &deflate[l]), &format!("M⁺(η = {eta:.4e}) in sector ℓ = {l}"))?;
                        Ok(CMat::from_fn(n, n, |i, j| inv[(i, j)] * (s.v[i] * s.v[j])))
                    })
                    .collect::<Result<Vec<CMat>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ell_max, eta_cap, panels, blocks })
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.panels.iter().flat_map(|p| p.nodes.iter().copied()).collect()
    }

    fn locate(&self, eta: f64) -> usize {
        let k = self.panels.partition_point(|p| p.b < eta);
        k.min(self.panels.len() - 1)
    }
}

/// Laurent principal part of (M⁺)⁻¹ in one sector, v folded in.
#[derive(Debug, Clone, Default)]
pub struct PrincipalPart {
    /// η⁻¹ coefficient from a resonance (case ii) sector.
    pub resonance: Option<CMat>,
    /// η⁻² coefficient from an eigenvalue (case iii) sector.
    pub eigen_m2: Option<CMat>,
    /// η⁻¹ coefficient from an eigenvalue (case iii) sector.
    pub eigen_m1: Option<CMat>,
}

fn fold_v(m: &CMat, v: &[f64]) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (v[i] * v[j]))
}

/// Amplitude components tabulated per geometry.
const COMPONENTS: usize = 4;
const CORR: usize = 0;
const RES: usize = 1;
const EIG2: usize = 2;
const EIG1: usize = 3;

/// Jacobian-weighted amplitudes (4η³+2η)·(−1/π)·Im(·) at the cache nodes for
/// a fixed set of geometries: the full correction and the three principal
/// part pieces. All are bounded and analytic down to η = 0.
#[derive(Debug, Clone)]
pub struct AmplitudeTable {
    pub geometries: Vec<Geometry>,
    /// values[c][node * m + k], m = geometries.len()
    values: [Vec<f64>; COMPONENTS],
}

/// Everything needed to evaluate perturbed propagator kernels for one potential.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub potential: Potential,
    pub grid: Arc<RadialGrid>,
    pub ell_max: usize,
    pub classification: Classification,
    pub expansion: ExpansionCoefficients,
    pub principal: Vec<PrincipalPart>,
    pub cache: SpectralCache,
    /// Accuracy of the η-quadratures relative to [`dispersive_envelope`].
    pub rel_tol: f64,
}

impl Propagator {
    pub fn new(potential: Potential, grid: Arc<RadialGrid>, ell_max: usize, null_tol: f64, eta_cap: f64) -> Result<Self> {
        let classification = classify(&potential, &grid, ell_max, null_tol)?;
        let expansion = leading_coefficients(&classification, &potential, &grid)?;
        let s = sample(&potential, &grid)?;
        let principal = expansion
            .sectors
            .iter()
            .map(|sec| match sec {
                SectorExpansion::Regular { .. } => PrincipalPart::default(),
                SectorExpansion::Resonance { m_minus1, .. } => {
                    PrincipalPart { resonance: Some(fold_v(m_minus1, &s.v)), ..Default::default() }
                }
                SectorExpansion::Eigenvalue { a_minus2, a_minus1, a_minus1_closed, .. } => PrincipalPart {
                    resonance: None,
                    eigen_m2: Some(fold_v(a_minus2, &s.v)),
                    eigen_m1: Some(fold_v(a_minus1_closed.as_ref().unwrap_or(a_minus1), &s.v)),
                },
            })
            .collect();
        let cache = SpectralCache::build(&potential, &grid, ell_max, &expansion, eta_cap)?;
        Ok(Self { potential, grid, ell_max, classification, expansion, principal, cache, rel_tol: DEFAULT_REL_TOL })
    }

    pub fn verdict(&self) -> Verdict {
        self.classification.verdict
    }

    /// Tabulates the amplitudes for `geometries` at every cache node.
    pub fn amplitudes(&self, geometries: &[Geometry]) -> Result<AmplitudeTable> {
        let m = geometries.len();
        let s = sample(&self.potential, &self.grid)?;
        let mut radii: Vec<f64> = geometries.iter().flat_map(|g| [g.r, g.r_prime]).collect();
        radii.sort_by(|a, b| a.total_cmp(b));
        radii.dedup();
        let idx = |r: f64| radii.binary_search_by(|x| x.total_cmp(&r)).unwrap();
        let wts: Vec<Vec<f64>> = geometries.iter().map(|g| sector_weights(self.ell_max, g.cos_gamma)).collect();
        let nodes = self.cache.nodes();
        let lmax = self.ell_max;

        let per_node: Vec<[Vec<f64>; COMPONENTS]> = nodes
            .par_iter()
            .enumerate()
            .map(|(q, &eta)| {
                let ev: Vec<Vec<DVector<Complex64>>> =
                    radii.iter().map(|&r| evaluation_vectors(BoundarySign::Plus, eta, r, &self.grid, &vec![1.0; s.v.len()], lmax)).collect();
                let mut out: [Vec<f64>; COMPONENTS] = std::array::from_fn(|_| vec![0.0; m]);
                let scale = -jacobian_unchecked(eta) / PI;
                for (k, g) in geometries.iter().enumerate() {
                    let (a, b) = (idx(g.r), idx(g.r_prime));
                    let mut acc = [ZERO; COMPONENTS];
                    for l in 0..=lmax {
                        let (x, y) = (&ev[a][l], &ev[b][l]);
                        let bil = |w: &CMat| (x.transpose() * (w * y))[(0, 0)] * wts[k][l];
                        acc[CORR] += bil(&self.cache.blocks[q][l]);
                        let pp = &self.principal[l];
                        if let Some(w) = &pp.resonance {
                            acc[RES] += bil(w) / eta;
                        }
                        if let Some(w) = &pp.eigen_m2 {
                            acc[EIG2] += bil(w) / (eta * eta);
                        }
                        if let Some(w) = &pp.eigen_m1 {
                            acc[EIG1] += bil(w) / eta;
                        }
                    }
                    for c in 0..COMPONENTS {
                        out[c][k] = scale * acc[c].im;
                    }
                }
                out
            })
            .collect();
        let values = std::array::from_fn(|c| per_node.iter().flat_map(|row| row[c].iter().copied()).collect());
        Ok(AmplitudeTable { geometries: geometries.to_vec(), values })
    }

    /// Interpolated Σ_c coef[c]·component_c at η, one value per geometry.
    fn interp(&self, table: &AmplitudeTable, coef: &[f64; COMPONENTS], eta: f64, out: &mut [f64], scratch: &mut [f64]) {
        let m = table.geometries.len();
        let p = self.cache.locate(eta);
        let base = p * NODES_PER_PANEL * m;
        let len = NODES_PER_PANEL * m;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&w, values) in coef.iter().zip(&table.values) {
            if w == 0.0 {
                continue;
            }
            self.cache.panels[p].eval(eta, &values[base..base + len], m, scratch);
            for k in 0..m {
                out[k] += w * scratch[k];
            }
        }
    }

    /// Power-law envelope of amplitude/Jacobian on the last panel, measured.
    fn measured_envelope(&self, table: &AmplitudeTable, coef: &[f64; COMPONENTS]) -> TailEnvelope {
        let m = table.geometries.len();
        let last = self.cache.panels.last().unwrap();
        let (mut c0, mut c1, mut c2) = (0.0f64, 0.0f64, 0.0f64);
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut scratch = vec![0.0; m];
        let h = 1e-3 * (last.b - last.a);
        for k in 0..=8 {
            let x = last.a + (last.b - last.a - 2.0 * h) * k as f64 / 8.0 + h;
            self.interp(table, coef, x - h, &mut a, &mut scratch);
            self.interp(table, coef, x, &mut b, &mut scratch);
            self.interp(table, coef, x + h, &mut d, &mut scratch);
            let (ja, jb, jd) = (jacobian_unchecked(x - h), jacobian_unchecked(x), jacobian_unchecked(x + h));
            for i in 0..m {
                let (fa, fb, fd) = (a[i] / ja, b[i] / jb, d[i] / jd);
                c0 = c0.max(fb.abs() * x * x);
                c1 = c1.max(((fd - fa) / (2.0 * h)).abs() * x * x);
                c2 = c2.max(((fd - 2.0 * fb + fa) / (h * h)).abs() * x * x);
            }
        }
        // margin for the extrapolation beyond the table
        TailEnvelope { valid_from: self.cache.eta_cap, c0: 2.0 * c0, p0: 2.0, c1: 2.0 * c1, p1: 2.0, c2: 2.0 * c2, p2: 2.0, max_eta: self.cache.eta_cap }
    }

    /// ∫₀^∞ e^{−itλ} Σ_c coef[c]·component_c dη per geometry: quadrature up
    /// to the end of the table split at `cut`, plus the two boundary terms of
    /// integration by parts at the end. Returns values and an error estimate.
    fn integrate_table(&self, t: f64, table: &AmplitudeTable, coef: &[f64; COMPONENTS], cut: f64, upper: f64) -> Result<(Vec<Complex64>, f64)> {
        let m = table.geometries.len();
        let tol = Tolerance { abs: 0.5 * self.rel_tol * dispersive_envelope(t), rel: self.rel_tol };
        let h = |eta: f64, out: &mut [Complex64]| {
            let mut re = vec![0.0; m];
            let mut scratch = vec![0.0; m];
            self.interp(table, coef, eta, &mut re, &mut scratch);
            for (o, r) in out.iter_mut().zip(&re) {
                *o = Complex64::new(*r, 0.0);
            }
        };
        let upper = upper.min(self.cache.eta_cap);
        let cut = cut.clamp(0.0, upper);
        let lo = integrate_phase(t, 0.0, cut, m, tol, DEFAULT_MAX_PANELS, &h)?;
        let hi = integrate_phase(t, cut, upper, m, tol, DEFAULT_MAX_PANELS, &h)?;
        let mut values: Vec<Complex64> = lo.values.iter().zip(&hi.values).map(|(a, b)| a + b).collect();
        let mut err = lo.error + hi.error;
        if upper >= self.cache.eta_cap {
            let f = |eta: f64, out: &mut [Complex64]| {
                h(eta, out);
                let j = jacobian_unchecked(eta);
                out.iter_mut().for_each(|o| *o /= j);
            };
            let env = self.measured_envelope(table, coef);
            let tail = tail_to(&f, m, &env, t, upper, upper, tol, DEFAULT_MAX_PANELS)?;
            values.iter_mut().zip(&tail.values).for_each(|(v, x)| *v += x);
            err += tail.error();
        }
        Ok((values, err))
    }

    fn subtraction(&self) -> Correction {
        match self.verdict() {
            Verdict::Resonance => Correction::F,
            Verdict::Eigenvalue | Verdict::ResonanceAndEigenvalue => Correction::G,
            _ => Correction::None,
        }
    }

    /// e^{−itH}P_ac(x, y) for every geometry of `table`. With
    /// `Subtract::Auto` and t > 1 the zero-energy singular part (F or G,
    /// integrated over the whole energy range) is removed.
    pub fn evolution_kernel(&self, t: f64, table: &AmplitudeTable, subtract: Subtract) -> Result<Vec<PropagatorSample>> {
        self.evolution_kernel_split(t, table, subtract, 1.0)
    }

    /// As [`Self::evolution_kernel`] with the low-energy cut scaled by `cut_scale`.
    pub fn evolution_kernel_split(&self, t: f64, table: &AmplitudeTable, subtract: Subtract, cut_scale: f64) -> Result<Vec<PropagatorSample>> {
        let cut = split_points(t)?.low_cut * cut_scale;
        let which = if subtract == Subtract::Auto && t > 1.0 { self.subtraction() } else { Correction::None };
        let coef = if which == Correction::None { [1.0, 0.0, 0.0, 0.0] } else { [1.0, -1.0, -1.0, -1.0] };
        let seps: Vec<f64> = table.geometries.iter().map(|g| g.separation()).collect();
        let free = free_kernel_many(t, &seps, self.rel_tol)?;
        let (corr, err) = if self.expansion.norm_l1 == 0.0 {
            (vec![ZERO; seps.len()], 0.0)
        } else {
            self.integrate_table(t, table, &coef, cut, f64::INFINITY)?
        };
        Ok(table
            .geometries
            .iter()
            .zip(free.iter().zip(&corr))
            .map(|(g, ((fv, fe), c))| PropagatorSample {
                t,
                geometry: *g,
                value: fv + c,
                correction_subtracted: which,
                est_error: fe + err,
            })
            .collect())
    }

    /// F_t(x, y) = ∫₀^{t^{−1/2}} e^{−it(η⁴+η²)} 4π(4η²+2)/(i‖V‖₁)·[R₀⁺vT₁⁻¹vR₀⁺ + R₀⁻vT₁⁻¹vR₀⁻] dη.
    pub fn f_kernel(&self, t: f64, table: &AmplitudeTable) -> Result<Vec<Complex64>> {
        if self.verdict() != Verdict::Resonance {
            return Err(Error::Precondition(format!("F_t needs a resonance, verdict is {:?}", self.verdict())));
        }
        self.display(t, table, [0.0, 1.0, 0.0, 0.0])
    }

    /// G_t(x, y) = F part + ∫₀^{t^{−1/2}} e^{−it(η⁴+η²)}(4η + 2/η)[R₀⁺vA₋₂vR₀⁺ − R₀⁻vA₋₂vR₀⁻] dη.
    pub fn g_kernel(&self, t: f64, table: &AmplitudeTable) -> Result<Vec<Complex64>> {
        if !matches!(self.verdict(), Verdict::Eigenvalue | Verdict::ResonanceAndEigenvalue) {
            return Err(Error::Precondition(format!("G_t needs a zero eigenvalue, verdict is {:?}", self.verdict())));
        }
        self.display(t, table, [0.0, 1.0, 1.0, 0.0])
    }

    fn display(&self, t: f64, table: &AmplitudeTable, coef: [f64; COMPONENTS]) -> Result<Vec<Complex64>> {
        if !(t > 1.0 && t.is_finite()) {
            return domain(format!("F_t and G_t are defined for t > 1, got {t}"));
        }
        let top = t.powf(-0.5);
        let (v, _) = self.integrate_table(t, table, &coef, top, top)?;
        // the evolution normalization carries 1/(2πi) relative to the display
        Ok(v.into_iter().map(|z| z * Complex64::new(0.0, -2.0 * PI)).collect())
    }

    /// Σ_ℓ (2ℓ+1)/(4π)P_ℓ(cos γ)[e⁺A₋₂e⁺ − e⁻A₋₂e⁻] at η, computed directly.
    pub fn eigen_sandwich_difference(&self, eta: f64, geometry: &Geometry) -> Result<Complex64> {
        let s = sample(&self.potential, &self.grid)?;
        let ones = vec![1.0; s.v.len()];
        let wts = sector_weights(self.ell_max, geometry.cos_gamma);
        let mut acc = ZERO;
        for sign in [BoundarySign::Plus, BoundarySign::Minus] {
            let ex = evaluation_vectors(sign, eta, geometry.r, &self.grid, &ones, self.ell_max);
            let ey = evaluation_vectors(sign, eta, geometry.r_prime, &self.grid, &ones, self.ell_max);
            for (l, pp) in self.principal.iter().enumerate() {
                if let Some(w) = &pp.eigen_m2 {
                    let v = (ex[l].transpose() * (w * &ey[l]))[(0, 0)] * wts[l];
                    acc += v * sign.as_f64();
                }
            }
        }
        Ok(acc)
    }
}

/// Weighted norm ‖(1+r)^{−s′} R_V±(λ) (1+r)^{−s}‖ maximized over sectors ℓ ≤ ell_max.
pub fn weighted_norm(
    sign: BoundarySign,
    point: SpectralPoint,
    potential: &Potential,
    grid: &Arc<RadialGrid>,
    ell_max: usize,
    s: f64,
    s_prime: f64,
) -> Result<f64> {
    check_weights(s, s_prime)?;
    let rv = resolvent_sectors(sign, point.eta, point.eta.max(1.0), potential, grid, ell_max)?;
    Ok(max_weighted(&rv, grid, s, s_prime))
}

/// ‖(1+r)^{−s′} dR_V±/dλ (1+r)^{−s}‖ by a central difference in λ with
/// relative step `rel_step`; both points share one quadrature rule.
#[allow(clippy::too_many_arguments)]
pub fn weighted_norm_derivative(
    sign: BoundarySign,
    point: SpectralPoint,
    potential: &Potential,
    grid: &Arc<RadialGrid>,
    ell_max: usize,
    s: f64,
    s_prime: f64,
    rel_step: f64,
) -> Result<f64> {
    check_weights(s, s_prime)?;
    let h = rel_step * point.lambda;
    if !(h > 0.0 && h < point.lambda) {
        return domain("finite-difference step must lie in (0, λ)");
    }
    let up = SpectralPoint::from_lambda(point.lambda + h)?;
    let dn = SpectralPoint::from_lambda(point.lambda - h)?;
    let freq = up.eta.max(1.0);
    let a = resolvent_sectors(sign, up.eta, freq, potential, grid, ell_max)?;
    let b = resolvent_sectors(sign, dn.eta, freq, potential, grid, ell_max)?;
    let d: Vec<CMat> = a.iter().zip(&b).map(|(x, y)| (x - y) / Complex64::new(2.0 * h, 0.0)).collect();
    Ok(max_weighted(&d, grid, s, s_prime))
}

fn check_weights(s: f64, s_prime: f64) -> Result<()> {
    if !(s > 0.5 && s_prime > 0.5) {
        return domain(format!("weights must exceed 1/2, got s = {s}, s′ = {s_prime}"));
    }
    Ok(())
}

/// Symmetrized R_V± sector matrices A − A v M⁻¹ v A with M = U + vAv.
fn resolvent_sectors(sign: BoundarySign, eta: f64, freq: f64, potential: &Potential, grid: &Arc<RadialGrid>, ell_max: usize) -> Result<Vec<CMat>> {
    let s = sample(potential, grid)?;
    let ops = build_sector_operators(&|x| r0(sign, eta, x), ell_max, grid, freq);
    let n = grid.count;
    ops.into_iter()
        .map(|op| {
            let a = op.matrix;
            if s.v.iter().all(|&v| v == 0.0) {
                return Ok(a);
            }
            let mut m = CMat::from_fn(n, n, |i, j| a[(i, j)] * (s.v[i] * s.v[j]));
            for i in 0..n {
                m[(i, i)] += s.u[i];
            }
            let va = CMat::from_fn(n, n, |i, j| a[(i, j)] * s.v[i]);
            let lu = m.lu();
            let x = lu.solve(&va).ok_or_else(|| Error::Singular(format!("M at η = {eta} in sector ℓ = {}", op.ell)))?;
            let av = CMat::from_fn(n, n, |i, j| a[(i, j)] * s.v[j]);
            Ok(&a - av * x)
        })
        .collect()
}

fn max_weighted(mats: &[CMat], grid: &RadialGrid, s: f64, s_prime: f64) -> f64 {
    let left: Vec<f64> = grid.nodes.iter().map(|r| (1.0 + r).powf(-s_prime)).collect();
    let right: Vec<f64> = grid.nodes.iter().map(|r| (1.0 + r).powf(-s)).collect();
    mats.iter()
        .map(|m| {
            let w = CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (left[i] * right[j]));
            w.svd(false, false).singular_values.max()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::birman::{resonance_tune, scan_bracket, DEFAULT_NULL_TOL};
    use crate::fit::{fit_decay, log_grid};
    use crate::kernels::free_resolvent;
    use crate::oscillatory::tests::rotated;
    use crate::quad::Rule;
    use crate::waves::build_grid;

    fn slope(xs: &[f64], ys: &[f64]) -> f64 {
        let s: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        fit_decay(&s).unwrap().exponent
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::new(-1.0, 1.0, 0.0).is_err());
        assert!(Geometry::new(1.0, 1.0, 1.5).is_err());
        let g = Geometry::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.separation(), 0.0);
        let g = Geometry::new(1.0, 2.0, 0.5).unwrap();
        assert!((g.separation() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn free_kernel_at_origin_matches_contour() {
        let t = 5.0;
        let got = free_kernel_many(t, &[0.0], 1e-6).unwrap()[0].0;
        let want = rotated(&|z| z / (4.0 * PI * PI * (z * z * 2.0 + 1.0)), t, 0.0, 12.0);
        assert!((got - want).norm() < 1e-5 * want.norm(), "{got} vs {want}");
    }

    #[test]
    fn free_kernel_off_origin_matches_contour() {
        // sin(zs) grows only exponentially along the ray while e^{−itz⁴} decays
        // like e^{−tρ⁴}, and the poles at ±i/√2 lie outside the swept sector
        let (t, s) = (2.0, 1.3);
        let got = free_kernel_many(t, &[s], 1e-6).unwrap()[0].0;
        let f = |z: Complex64| (z * s).sin() / (4.0 * PI * PI * s * (z * z * 2.0 + 1.0));
        let want = rotated(&f, t, 0.0, 12.0);
        assert!((got - want).norm() < 1e-5 * want.norm(), "{got} vs {want}");
    }

    #[test]
    fn free_kernel_rejects_bad_input() {
        assert!(free_kernel(0.0, 1.0).is_err());
        assert!(free_kernel(1.0, -1.0).is_err());
    }

    #[test]
    fn free_dispersion_slopes() {
        let rs: Vec<f64> = (0..20).map(|k| 0.1 * k as f64).collect();
        let sup = |t: f64| free_kernel_many(t, &rs, DEFAULT_REL_TOL).unwrap().iter().map(|v| v.0.norm()).fold(0.0, f64::max);
        let ts = log_grid(10.0, 1e3, 7);
        let k = slope(&ts, &ts.iter().map(|&t| sup(t)).collect::<Vec<_>>());
        assert!((k + 1.5).abs() < 0.1, "{k}");
        let ts = log_grid(1e-3, 1e-1, 7);
        let k = slope(&ts, &ts.iter().map(|&t| sup(t)).collect::<Vec<_>>());
        assert!((k + 0.75).abs() < 0.08, "{k}");
    }

    #[test]
    fn chebyshev_interpolation() {
        let p = ChebPanel::new(0.5, 0.75, NODES_PER_PANEL);
        let f = |x: f64| (3.0 * x).sin() / (1.0 + x * x);
        let vals: Vec<f64> = p.nodes.iter().map(|&x| f(x)).collect();
        let mut out = [0.0];
        for k in 0..=50 {
            let x = 0.5 + 0.25 * k as f64 / 50.0;
            p.eval(x, &vals, 1, &mut out);
            assert!((out[0] - f(x)).abs() < 1e-14, "{x}");
        }
        let e = cache_edges(6.0);
        assert_eq!(e.len(), 11 + 12 + 4);
        assert_eq!(*e.last().unwrap(), 6.0);
    }

    fn grid() -> Arc<RadialGrid> {
        Arc::new(build_grid(32, Some(6.0), 20.0).unwrap())
    }

    #[test]
    fn zero_potential_resolvent_is_free() {
        let g = Geometry::new(0.7, 1.1, 0.2).unwrap();
        let v = perturbed_resolvent(BoundarySign::Plus, 0.8, &g, &Potential::zero(), &grid(), 3).unwrap();
        assert_eq!(v.value, free_resolvent(BoundarySign::Plus, 0.8, g.separation()).unwrap());
    }

    #[test]
    fn resolvent_conjugation() {
        let g = Geometry::new(0.7, 1.1, 0.2).unwrap();
        let pot = Potential::gaussian_well(1.0);
        let p = perturbed_resolvent(BoundarySign::Plus, 0.8, &g, &pot, &grid(), 3).unwrap().value;
        let m = perturbed_resolvent(BoundarySign::Minus, 0.8, &g, &pot, &grid(), 3).unwrap().value;
        assert!((p.conj() - m).norm() < 1e-14 * p.norm());
    }

    /// −∫ R₀(|x−z|) V(z) R₀(|z−y|) dz by a product rule in spherical coordinates.
    fn born_oracle(eta: f64, x: [f64; 3], y: [f64; 3], pot: &Potential) -> Complex64 {
        let (rr, rt, rp) = (Rule::gauss_legendre(80), Rule::gauss_legendre(64), Rule::gauss_legendre(64));
        let mut acc = ZERO;
        let dist = |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        for (rho, wr) in rr.mapped(0.0, 6.0) {
            let vz = pot.value(rho);
            for (ct, wt) in rt.mapped(-1.0, 1.0) {
                let st = (1.0 - ct * ct).sqrt();
                for (ph, wp) in rp.mapped(0.0, 2.0 * PI) {
                    let z = [rho * st * ph.cos(), rho * st * ph.sin(), rho * ct];
                    let k = r0(BoundarySign::Plus, eta, dist(x, z)) * r0(BoundarySign::Plus, eta, dist(z, y));
                    acc += k * (vz * rho * rho * wr * wt * wp);
                }
            }
        }
        -acc
    }

    #[test]
    fn first_born_limit() {
        let eps = 1e-4;
        let eta = 0.7;
        let (r, rp, cg) = (0.8f64, 1.3f64, 0.4f64);
        let geom = Geometry::new(r, rp, cg).unwrap();
        let base = Potential::gaussian_well(1.0);
        let pot = base.with_coupling(base.coupling * eps);
        let g = Arc::new(build_grid(48, Some(6.0), 20.0).unwrap());
        let rv = perturbed_resolvent(BoundarySign::Plus, eta, &geom, &pot, &g, 30).unwrap();
        let free = r0(BoundarySign::Plus, eta, geom.separation());
        let got = (rv.value - free) / eps;
        let x = [0.0, 0.0, r];
        let y = [rp * (1.0 - cg * cg).sqrt(), 0.0, rp * cg];
        let want = born_oracle(eta, x, y, &base);
        assert!((got - want).norm() < 1e-3 * want.norm(), "{got} vs {want}");
        assert!(rv.truncation_estimate < 1e-3 * got.norm() * eps);
    }

    fn grid_40() -> Arc<RadialGrid> {
        Arc::new(build_grid(40, Some(6.0), 20.0).unwrap())
    }

    fn tuned_well(ell: usize, g: &Arc<RadialGrid>) -> Potential {
        let fam = |c: f64| Potential::gaussian_well(c);
        let br = scan_bracket(&fam, ell, g, 1.0, 1.5, 60).unwrap();
        Potential::gaussian_well(resonance_tune(&fam, ell, br, g, 1e-13).unwrap().c_star)
    }

    fn geometries() -> Vec<Geometry> {
        let mut v = Vec::new();
        for &(r, rp) in &[(0.0, 0.0), (0.5, 0.5), (1.0, 0.0), (1.0, 1.0), (0.5, 1.5)] {
            for cg in [1.0, -1.0] {
                v.push(Geometry::new(r, rp, cg).unwrap());
            }
        }
        v
    }

    fn sup(samples: &[PropagatorSample]) -> f64 {
        samples.iter().map(|s| s.value.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_potential_evolution_is_free() {
        let p = Propagator::new(Potential::zero(), grid(), 2, DEFAULT_NULL_TOL, 2.0).unwrap();
        let geoms = geometries();
        let table = p.amplitudes(&geoms).unwrap();
        for t in [0.01, 0.7, 20.0] {
            let ev = p.evolution_kernel(t, &table, Subtract::Auto).unwrap();
            let seps: Vec<f64> = geoms.iter().map(|g| g.separation()).collect();
            let fr = free_kernel_many(t, &seps, p.rel_tol).unwrap();
            for (a, b) in ev.iter().zip(&fr) {
                assert_eq!(a.value, b.0);
            }
        }
    }

    #[test]
    fn regular_well_dispersion() {
        let g = grid_40();
        let p = Propagator::new(Potential::gaussian_well(1.0), g, 2, DEFAULT_NULL_TOL, DEFAULT_ETA_CAP).unwrap();
        assert_eq!(p.verdict(), Verdict::Regular);
        let table = p.amplitudes(&geometries()).unwrap();
        let ts = log_grid(10.0, 300.0, 6);
        let ys: Vec<f64> = ts.iter().map(|&t| sup(&p.evolution_kernel(t, &table, Subtract::Auto).unwrap())).collect();
        let k = slope(&ts, &ys);
        assert!((k + 1.5).abs() < 0.15, "{k} {ys:?}");

        // moving the low/mid boundary does not change the result
        let a = p.evolution_kernel_split(20.0, &table, Subtract::None, 1.0).unwrap();
        let b = p.evolution_kernel_split(20.0, &table, Subtract::None, 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.value - y.value).norm() <= x.est_error + y.est_error, "{} {}", (x.value - y.value).norm(), x.est_error);
        }
    }

    #[test]
    fn resonant_well_subtraction() {
        let g = grid_40();
        let pot = tuned_well(0, &g);
        let p = Propagator::new(pot, g, 2, DEFAULT_NULL_TOL, DEFAULT_ETA_CAP).unwrap();
        assert_eq!(p.verdict(), Verdict::Resonance);
        let table = p.amplitudes(&geometries()).unwrap();
        let ts = log_grid(10.0, 1000.0, 5);
        let raw: Vec<f64> = ts.iter().map(|&t| sup(&p.evolution_kernel(t, &table, Subtract::None).unwrap())).collect();
        let sub: Vec<f64> = ts.iter().map(|&t| sup(&p.evolution_kernel(t, &table, Subtract::Auto).unwrap())).collect();
        let f: Vec<f64> = ts.iter().map(|&t| p.f_kernel(t, &table).unwrap().iter().map(|z| z.norm()).fold(0.0, f64::max)).collect();
        let (kr, ks, kf) = (slope(&ts, &raw), slope(&ts, &sub), slope(&ts, &f));
        assert!((kr + 0.5).abs() < 0.15, "raw {kr}");
        assert!((ks + 1.5).abs() < 0.2, "subtracted {ks} {sub:?}");
        assert!((kf + 0.5).abs() < 0.1, "F {kf}");
        assert!(p.g_kernel(20.0, &table).is_err());
    }

    #[test]
    fn eigenvalue_well_subtraction() {
        let g = grid_40();
        let pot = tuned_well(1, &g);
        let p = Propagator::new(pot, g, 2, DEFAULT_NULL_TOL, DEFAULT_ETA_CAP).unwrap();
        assert_eq!(p.verdict(), Verdict::Eigenvalue);
        let geoms = geometries();
        let table = p.amplitudes(&geoms).unwrap();
        // the A₋₁/η term carries a t^{−1/2} piece that only dominates late
        let late = log_grid(100.0, 1000.0, 5);
        let raw: Vec<f64> = late.iter().map(|&t| sup(&p.evolution_kernel(t, &table, Subtract::None).unwrap())).collect();
        let kr = slope(&late, &raw);
        assert!((kr + 0.5).abs() < 0.15, "raw {kr} {raw:?}");
        let ts = log_grid(10.0, 1000.0, 5);
        let sub: Vec<f64> = ts.iter().map(|&t| sup(&p.evolution_kernel(t, &table, Subtract::Auto).unwrap())).collect();
        let ks = slope(&ts, &sub);
        assert!((ks + 1.5).abs() < 0.2, "subtracted {ks} {sub:?}");
        // PS₂ = 0 removes the O(η) part of the ± sandwich difference, so for
        // a p-wave eigenvalue the displayed G decays like t^{−3/2}
        let gk: Vec<f64> = ts.iter().map(|&t| p.g_kernel(t, &table).unwrap().iter().map(|z| z.norm()).fold(0.0, f64::max)).collect();
        let kg = slope(&ts, &gk);
        assert!((kg + 1.5).abs() < 0.15, "G {kg}");
        assert!(p.f_kernel(20.0, &table).is_err());

        // the ± sandwiches cancel to first order at η = 0
        let geo = Geometry::new(0.5, 1.5, 0.3).unwrap();
        let ratios: Vec<f64> =
            log_grid(1e-6, 1e-2, 5).iter().map(|&e| p.eigen_sandwich_difference(e, &geo).unwrap().norm() / e).collect();
        assert!(ratios.windows(2).all(|w| w[0] <= w[1] * 1.01), "{ratios:?}");
        assert!(ratios[4] > 0.0 && ratios[4] < 1.0, "{ratios:?}");

        // with A₋₂ removed G reduces to F, which is zero without a resonance sector
        let mut q = p.clone();
        q.principal.iter_mut().for_each(|pp| pp.eigen_m2 = None);
        let t2 = q.amplitudes(&geoms).unwrap();
        assert!(q.g_kernel(20.0, &t2).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn weighted_norm_decay() {
        let g = Arc::new(build_grid(120, Some(10.0), 20.0).unwrap());
        let lams = log_grid(1e2, 1e4, 5);
        let free: Vec<f64> = lams
            .iter()
            .map(|&l| weighted_norm(BoundarySign::Plus, SpectralPoint::from_lambda(l).unwrap(), &Potential::zero(), &g, 2, 2.0, 2.0).unwrap())
            .collect();
        let k = slope(&lams, &free);
        assert!((k + 0.75).abs() < 0.1, "{k} {free:?}");
        let well = Potential::gaussian_well(1.0);
        let at = |l: f64| SpectralPoint::from_lambda(l).unwrap();
        let reg: Vec<f64> = lams.iter().map(|&l| weighted_norm(BoundarySign::Minus, at(l), &well, &g, 2, 2.0, 2.0).unwrap()).collect();
        let k = slope(&lams, &reg);
        assert!((k + 0.75).abs() < 0.1, "{k}");
        let der: Vec<f64> =
            lams.iter().map(|&l| weighted_norm_derivative(BoundarySign::Plus, at(l), &well, &g, 2, 2.0, 2.0, 1e-3).unwrap()).collect();
        let k = slope(&lams, &der);
        assert!((k + 1.5).abs() < 0.2, "{k}");
        assert!(weighted_norm(BoundarySign::Plus, at(1.0), &Potential::zero(), &g, 0, 0.5, 2.0).is_err());
        assert!(weighted_norm_derivative(BoundarySign::Plus, at(1.0), &well, &g, 0, 2.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn middle_energy_rates() {
        let g = grid_40();
        let etas = log_grid(1e-3, 1e-1, 6);
        let rate = |pot: &Potential| {
            let ys: Vec<f64> = etas
                .iter()
                .map(|&e| weighted_norm(BoundarySign::Plus, SpectralPoint::from_eta(e).unwrap(), pot, &g, 2, 2.0, 2.0).unwrap())
                .collect();
            slope(&etas, &ys)
        };
        assert!(rate(&Potential::gaussian_well(1.0)) > -0.1);
        assert!((rate(&tuned_well(0, &g)) + 1.0).abs() < 0.15);
        assert!((rate(&tuned_well(1, &g)) + 2.0).abs() < 0.2);
    }
}
