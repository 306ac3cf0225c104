//! Birman–Schwinger operators M±(λ) = U + vR₀±(λ)v, zero-energy
//! classification and the small-η inverse expansions.
//!
//! Everything is sector-diagonal. Matrices use the symmetrized Nyström
//! convention of [`crate::waves`], so `P`, projections and adjoints are the
//! plain Euclidean ones. Coefficients are stored for the `+` boundary value;
//! the `−` ones are entrywise conjugates because M⁻ = conj(M⁺).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::kernels::{g_unchecked, r0, BoundarySign};
use crate::waves::{build_sector_operators, sector_rows, RadialGrid, SectorOperator};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_NULL_TOL: f64 = 1e-7;
/// Largest condition number an inversion is allowed to have.
pub const CONDITION_LIMIT: f64 = 1e12;

type CMat = DMatrix<Complex64>;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    /// e^{−(r/width)²}
    Gaussian { width: f64 },
    /// e^{−rate·r}
    Exponential { rate: f64 },
    /// (1 + r)^{−exponent}
    PolynomialDecay { exponent: f64 },
}

impl Profile {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::Gaussian { width } => (-(r / width).powi(2)).exp(),
            Profile::Exponential { rate } => (-rate * r).exp(),
            Profile::PolynomialDecay { exponent } => (1.0 + r).powf(-exponent),
        }
    }
}

/// V(r) = coupling · profile(r), with an asserted decay exponent β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Potential {
    pub profile: Profile,
    pub beta: f64,
    pub coupling: f64,
}

impl Potential {
    pub fn new(profile: Profile, beta: f64, coupling: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return domain(format!("decay exponent must be positive, got {beta}"));
        }
        if !coupling.is_finite() {
            return domain("coupling must be finite");
        }
        let ok = match profile {
            Profile::Zero => true,
            Profile::Gaussian { width } => width > 0.0 && width.is_finite(),
            Profile::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Profile::PolynomialDecay { exponent } => exponent > 0.0 && exponent.is_finite(),
        };
        if !ok {
            return domain(format!("invalid profile parameters: {profile:?}"));
        }
        Ok(Self { profile, beta, coupling })
    }

    pub fn zero() -> Self {
        Self { profile: Profile::Zero, beta: 10.0, coupling: 0.0 }
    }

    /// V = −c·e^{−r²}. Gaussians decay faster than any power; β = 20 is
    /// the exponent recorded for them.
    pub fn gaussian_well(c: f64) -> Self {
        Self { profile: Profile::Gaussian { width: 1.0 }, beta: 20.0, coupling: -c }
    }

    pub fn with_coupling(&self, coupling: f64) -> Self {
        Self { coupling, ..*self }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.coupling * self.profile.eval(r)
    }

    /// v = √|V|
    pub fn v(&self, r: f64) -> f64 {
        self.value(r).abs().sqrt()
    }

    /// U = 1 where V ≥ 0 and −1 where V < 0.
    pub fn u(&self, r: f64) -> f64 {
        if self.value(r) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// ‖V‖₁ = 4π ∫ |V| r² dr on the grid.
    pub fn l1_norm(&self, grid: &RadialGrid) -> f64 {
        4.0 * PI * grid.integrate_r2(|r| self.value(r).abs())
    }

    /// max over the grid of |V(r)|·(1 + r)^β.
    pub fn envelope_constant(&self, grid: &RadialGrid) -> f64 {
        grid.nodes.iter().map(|&r| self.value(r).abs() * (1.0 + r).powf(self.beta)).fold(0.0, f64::max)
    }
}

/// v and U sampled on the grid.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn sample(pot: &Potential, grid: &RadialGrid) -> Result<Sampled> {
    let vals: Vec<f64> = grid.nodes.iter().map(|&r| pot.value(r)).collect();
    if vals.iter().any(|x| !x.is_finite()) {
        return domain("potential is not finite on the grid");
    }
    Ok(Sampled {
        v: vals.iter().map(|x| x.abs().sqrt()).collect(),
        u: vals.iter().map(|&x| if x >= 0.0 { 1.0 } else { -1.0 }).collect(),
    })
}

fn sandwich(m: &CMat, v: &[f64]) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (v[i] * v[j]))
}

fn with_u(mut m: CMat, u: &[f64]) -> CMat {
    for (i, &ui) in u.iter().enumerate() {
        m[(i, i)] += ui;
    }
    m
}

fn wrap(ell: usize, grid: &Arc<RadialGrid>, matrix: CMat) -> SectorOperator {
    SectorOperator { ell, grid: Arc::clone(grid), matrix }
}

/// vKv for every sector ℓ ≤ lmax, K a separation kernel.
pub fn kernel_sandwich<K>(kernel: &K, pot: &Potential, grid: &Arc<RadialGrid>, lmax: usize, freq: f64) -> Result<Vec<CMat>>
where
    K: Fn(f64) -> Complex64 + Sync,
{
    let s = sample(pot, grid)?;
    Ok(build_sector_operators(kernel, lmax, grid, freq).into_iter().map(|op| sandwich(&op.matrix, &s.v)).collect())
}

/// vG_jv for every sector ℓ ≤ lmax.
pub fn g_sandwich(j: usize, pot: &Potential, grid: &Arc<RadialGrid>, lmax: usize) -> Result<Vec<CMat>> {
    kernel_sandwich(&|s| c(g_unchecked(j, s)), pot, grid, lmax, 1.0)
}

/// M±(η⁴ + η²) for every sector ℓ ≤ lmax.
pub fn build_m_sectors(sign: BoundarySign, eta: f64, pot: &Potential, grid: &Arc<RadialGrid>, lmax: usize) -> Result<Vec<SectorOperator>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return domain(format!("eta must be finite and nonnegative, got {eta}"));
    }
    let s = sample(pot, grid)?;
    let vkv = kernel_sandwich(&|r| r0(sign, eta, r), pot, grid, lmax, eta)?;
    Ok(vkv.into_iter().enumerate().map(|(l, m)| wrap(l, grid, with_u(m, &s.u))).collect())
}

pub fn build_m(sign: BoundarySign, eta: f64, pot: &Potential, grid: &Arc<RadialGrid>, ell: usize) -> Result<SectorOperator> {
    Ok(build_m_sectors(sign, eta, pot, grid, ell)?.pop().unwrap())
}

/// T₀ = U + vG₀v for every sector ℓ ≤ lmax.
pub fn build_t0_sectors(pot: &Potential, grid: &Arc<RadialGrid>, lmax: usize) -> Result<Vec<SectorOperator>> {
    let s = sample(pot, grid)?;
    let vgv = g_sandwich(0, pot, grid, lmax)?;
    Ok(vgv.into_iter().enumerate().map(|(l, m)| wrap(l, grid, with_u(m, &s.u))).collect())
}

pub fn build_t0(pot: &Potential, grid: &Arc<RadialGrid>, ell: usize) -> Result<SectorOperator> {
    Ok(build_t0_sectors(pot, grid, ell)?.pop().unwrap())
}

/// Unit vector spanning the range of P in the ℓ = 0 sector.
pub fn p_vector(pot: &Potential, grid: &RadialGrid) -> Result<DVector<f64>> {
    let norm = pot.l1_norm(grid);
    if norm == 0.0 {
        return domain("P is undefined for V ≡ 0");
    }
    let s = sample(pot, grid)?;
    let scale = (4.0 * PI / norm).sqrt();
    Ok(DVector::from_iterator(grid.count, grid.sqrt_measure().iter().zip(&s.v).map(|(m, v)| scale * m * v)))
}

/// P = v⟨·, v⟩/‖V‖₁ restricted to ℓ = 0; it vanishes in every other sector.
pub fn build_p(pot: &Potential, grid: &Arc<RadialGrid>) -> Result<SectorOperator> {
    let u = p_vector(pot, grid)?;
    Ok(wrap(0, grid, (&u * u.transpose()).map(c)))
}

fn singular_values(m: &CMat) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

/// Inverse with a condition-number guard; `what` names the factor in the error.
pub fn checked_inverse(m: &CMat, what: &str) -> Result<CMat> {
    checked_inverse_scaled(m, 0.0, what)
}

/// As [`checked_inverse`], with the condition number measured against
/// max(‖m‖, `scale`) so that a block which is zero up to rounding is caught.
fn checked_inverse_scaled(m: &CMat, scale: f64, what: &str) -> Result<CMat> {
    let s = singular_values(m);
    let lo = s.min();
    let k = if lo == 0.0 { f64::INFINITY } else { s.max().max(scale) / lo };
    if !(k <= CONDITION_LIMIT) {
        return Err(Error::Singular(format!("{what} is ill-conditioned (condition number {k:.3e})")));
    }
    m.clone().lu().try_inverse().ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// M⁻¹ = (M+S)⁻¹ + (M+S)⁻¹S M₁⁻¹ S(M+S)⁻¹ with M₁ = S − S(M+S)⁻¹S inverted on range(S).
pub fn jn_invert_matrix(m: &CMat, s: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if m.ncols() != n || s.shape() != m.shape() {
        return domain("M and S must be square and of equal size");
    }
    let scale = s.norm().max(1.0);
    if (s * s - s).norm() > 1e-8 * scale || (s.adjoint() - s).norm() > 1e-8 * scale {
        return Err(Error::Precondition("S is not an orthogonal projection".into()));
    }
    let ms_inv = checked_inverse(&(m + s), "M + S")?;
    if s.norm() == 0.0 {
        return Ok(ms_inv);
    }
    let svd = s.clone().svd(true, false);
    let u = svd.u.unwrap();
    let cols: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] > 0.5).collect();
    let q = CMat::from_fn(n, cols.len(), |i, j| u[(i, cols[j])]);
    let m1 = s - s * &ms_inv * s;
    // M₁ is a difference of O(1 + ‖(M+S)⁻¹‖) terms
    let scale = 1.0 + singular_values(&ms_inv).max();
    let m1_inv = &q * checked_inverse_scaled(&(q.adjoint() * m1 * &q), scale, "M₁ on range(S)")? * q.adjoint();
    Ok(&ms_inv + &ms_inv * s * m1_inv * s * &ms_inv)
}

pub fn jn_invert(m: &SectorOperator, s: &CMat) -> Result<SectorOperator> {
    Ok(SectorOperator { ell: m.ell, grid: Arc::clone(&m.grid), matrix: jn_invert_matrix(&m.matrix, s)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Regular,
    Resonance,
    Eigenvalue,
    ResonanceAndEigenvalue,
    Indeterminate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorReport {
    pub ell: usize,
    pub sigma_max: f64,
    pub threshold: f64,
    /// Up to five smallest singular values of T₀, ascending.
    pub smallest_singular_values: Vec<f64>,
    pub null_dim: usize,
    /// Smallest kept over largest discarded singular value.
    pub gap_ratio: Option<f64>,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullVector {
    pub ell: usize,
    /// Symmetrized coefficients, unit Euclidean norm.
    pub coefficients: Vec<f64>,
    /// ⟨φ, v⟩/‖v‖ (zero for ℓ ≥ 1).
    pub v_overlap: f64,
    /// Signed T₀ eigenvalue that was declared zero.
    pub eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub schema_version: u32,
    pub verdict: Verdict,
    pub tol: f64,
    pub ell_max: usize,
    pub sectors: Vec<SectorReport>,
    pub s1_basis: Vec<NullVector>,
    pub s2_basis: Vec<NullVector>,
    /// Singular values of T₁ = S₁PS₁ on span(S₁) in ℓ = 0.
    pub t1_singular_values: Vec<f64>,
    /// Smallest singular value of S₂vG₂vS₂ on span(S₂), per sector with S₂ ≠ 0.
    pub t2_smallest_singular_values: Vec<(usize, f64)>,
    pub diagnostics: Vec<String>,
}

impl Classification {
    pub fn basis(list: &[NullVector], ell: usize) -> Option<DMatrix<f64>> {
        let vs: Vec<&NullVector> = list.iter().filter(|n| n.ell == ell).collect();
        if vs.is_empty() {
            return None;
        }
        let n = vs[0].coefficients.len();
        Some(DMatrix::from_fn(n, vs.len(), |i, j| vs[j].coefficients[i]))
    }
}

fn real_part(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}

fn in_band(x: f64, thr: f64) -> bool {
    x >= thr / 3.0 && x <= 3.0 * thr
}

pub fn classify(pot: &Potential, grid: &Arc<RadialGrid>, ell_max: usize, tol: f64) -> Result<Classification> {
    if !(tol > 0.0 && tol < 1.0) {
        return domain(format!("tol must lie in (0, 1), got {tol}"));
    }
    let t0s = build_t0_sectors(pot, grid, ell_max)?;
    let norm = pot.l1_norm(grid);
    let pv = if norm > 0.0 { Some(p_vector(pot, grid)?) } else { None };
    let mut sectors = Vec::new();
    let mut s1 = Vec::new();
    let mut diagnostics = Vec::new();
    let mut ambiguous = false;

    for op in &t0s {
        let eig = SymmetricEigen::new(real_part(&op.matrix));
        let sig: Vec<f64> = eig.eigenvalues.iter().map(|x| x.abs()).collect();
        let sigma_max = sig.iter().cloned().fold(0.0, f64::max);
        let thr = tol * sigma_max;
        let mut order: Vec<usize> = (0..sig.len()).collect();
        order.sort_by(|&a, &b| sig[a].total_cmp(&sig[b]));
        let null: Vec<usize> = order.iter().copied().filter(|&k| sig[k] < thr).collect();
        let amb = sig.iter().any(|&s| in_band(s, thr));
        if amb {
            diagnostics.push(format!("sector {}: singular value within a factor 3 of the threshold {thr:.3e}", op.ell));
        }
        ambiguous |= amb;
        let gap_ratio = null.last().map(|&k| sig[order[null.len().min(order.len() - 1)]] / sig[k]);
        for &k in &null {
            let phi = eig.eigenvectors.column(k);
            let overlap = match (&pv, op.ell) {
                (Some(u), 0) => u.dot(&phi),
                _ => 0.0,
            };
            s1.push(NullVector { ell: op.ell, coefficients: phi.iter().copied().collect(), v_overlap: overlap, eigenvalue: eig.eigenvalues[k] });
        }
        sectors.push(SectorReport {
            ell: op.ell,
            sigma_max,
            threshold: thr,
            smallest_singular_values: order.iter().take(5).map(|&k| sig[k]).collect(),
            null_dim: null.len(),
            gap_ratio,
            ambiguous: amb,
        });
    }

    // S₂: inside ℓ = 0 it is the part of S₁ orthogonal to v; in ℓ ≥ 1 all of S₁
    let mut s2: Vec<NullVector> = s1.iter().filter(|n| n.ell > 0).cloned().collect();
    let mut t1_singular_values = Vec::new();
    if let Some(phi) = Classification::basis(&s1, 0) {
        let k = phi.ncols();
        let o = DVector::from_iterator(k, s1.iter().filter(|n| n.ell == 0).map(|n| n.v_overlap));
        let t1 = SymmetricEigen::new(&o * o.transpose());
        let mut ev: Vec<(f64, usize)> = t1.eigenvalues.iter().enumerate().map(|(i, &x)| (x.abs(), i)).collect();
        ev.sort_by(|a, b| b.0.total_cmp(&a.0));
        t1_singular_values = ev.iter().map(|e| e.0).collect();
        let on = o.norm();
        if in_band(on, tol) {
            ambiguous = true;
            diagnostics.push(format!("ℓ = 0 null space overlap with v ({on:.3e}) is within a factor 3 of tol"));
        }
        let keep: Vec<usize> = if on < tol { (0..k).collect() } else { ev.iter().skip(1).map(|e| e.1).collect() };
        for i in keep {
            let q = t1.eigenvectors.column(i);
            let w = &phi * q;
            let ov = pv.as_ref().map_or(0.0, |u| u.dot(&w));
            let lam = q.iter().zip(s1.iter().filter(|n| n.ell == 0)).map(|(a, n)| a * a * n.eigenvalue).sum();
            s2.push(NullVector { ell: 0, coefficients: w.iter().copied().collect(), v_overlap: ov, eigenvalue: lam });
        }
    }
    s2.sort_by_key(|n| n.ell);

    let mut t2 = Vec::new();
    if !s2.is_empty() {
        let lmax2 = s2.iter().map(|n| n.ell).max().unwrap();
        let g2 = g_sandwich(2, pot, grid, lmax2)?;
        for (l, g) in g2.iter().enumerate() {
            if let Some(psi) = Classification::basis(&s2, l) {
                let psi = psi.map(c);
                let x = psi.adjoint() * g * &psi;
                let smin = singular_values(&x).min();
                if smin <= tol {
                    diagnostics.push(format!("sector {l}: S₂vG₂vS₂ is nearly singular ({smin:.3e})"));
                }
                t2.push((l, smin));
            }
        }
    }

    let verdict = if ambiguous {
        Verdict::Indeterminate
    } else if s1.is_empty() {
        Verdict::Regular
    } else if s2.is_empty() {
        Verdict::Resonance
    } else if s2.len() == s1.len() {
        Verdict::Eigenvalue
    } else {
        Verdict::ResonanceAndEigenvalue
    };
    Ok(Classification {
        schema_version: SCHEMA_VERSION,
        verdict,
        tol,
        ell_max,
        sectors,
        s1_basis: s1,
        s2_basis: s2,
        t1_singular_values,
        t2_smallest_singular_values: t2,
        diagnostics,
    })
}

/// ψ = −G₀vφ evaluated at radii `r` for a null vector φ of T₀.
pub fn zero_mode(pot: &Potential, grid: &RadialGrid, phi: &NullVector, r: &[f64]) -> Result<Vec<f64>> {
    let s = sample(pot, grid)?;
    Ok(r.iter()
        .map(|&x| {
            let e = &sector_rows(&|d| g_unchecked(0, d), phi.ell, x, grid, 1.0)[phi.ell];
            -e.iter().zip(&s.v).zip(&phi.coefficients).map(|((ei, vi), fi)| ei.re * vi * fi).sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Case {
    #[serde(rename = "i")]
    Regular,
    #[serde(rename = "ii")]
    Resonance,
    #[serde(rename = "iii")]
    Eigenvalue,
}

/// Leading blocks of (M⁺)⁻¹ in one sector.
#[derive(Debug, Clone)]
pub enum SectorExpansion {
    /// T₀⁻¹ − iη(‖V‖₁/4π)T₀⁻¹PT₀⁻¹ + O(η²)
    Regular { t0_inv: CMat, first_order: CMat },
    /// M₋₁/η + M₀ + O(η)
    Resonance { m_minus1: CMat, m0: CMat, rho: f64 },
    /// A₋₂/η² + A₋₁/η + A₀ + O(η). A₋₁ and A₀ come from a least-squares
    /// fit; `a_minus1_closed` is −iA₋₂vG₃vA₋₂, valid when S₂ = S₁ in the sector.
    Eigenvalue { a_minus2: CMat, a_minus1: CMat, a0: CMat, a_minus1_closed: Option<CMat>, fit_residual: f64, surrogate: bool },
}

impl SectorExpansion {
    pub fn case(&self) -> Case {
        match self {
            SectorExpansion::Regular { .. } => Case::Regular,
            SectorExpansion::Resonance { .. } => Case::Resonance,
            SectorExpansion::Eigenvalue { .. } => Case::Eigenvalue,
        }
    }

    /// Truncated expansion of (M±(η⁴+η²))⁻¹.
    pub fn leading(&self, eta: f64, sign: BoundarySign) -> CMat {
        let m = match self {
            SectorExpansion::Regular { t0_inv, first_order } => t0_inv + first_order * c(eta),
            SectorExpansion::Resonance { m_minus1, m0, .. } => m_minus1 * c(1.0 / eta) + m0,
            SectorExpansion::Eigenvalue { a_minus2, a_minus1, a0, .. } => a_minus2 * c(eta.powi(-2)) + a_minus1 * c(1.0 / eta) + a0,
        };
        match sign {
            BoundarySign::Plus => m,
            BoundarySign::Minus => m.map(|z| z.conj()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpansionCoefficients {
    pub case: Case,
    pub norm_l1: f64,
    pub sectors: Vec<SectorExpansion>,
    /// T₀ eigenvalues that classification declared zero, per sector, as
    /// (ℓ, eigenvalue, vector); subtracting them makes T₀ exactly singular.
    pub deflation: Vec<(usize, f64, DVector<f64>)>,
}

impl ExpansionCoefficients {
    pub fn rho(&self) -> Option<f64> {
        self.sectors.iter().find_map(|s| match s {
            SectorExpansion::Resonance { rho, .. } => Some(*rho),
            _ => None,
        })
    }

    /// The rank-≤k correction removing the declared-zero eigenvalues in sector ℓ.
    pub fn deflation_matrix(&self, ell: usize, n: usize) -> CMat {
        let mut d = CMat::zeros(n, n);
        for (l, lam, phi) in &self.deflation {
            if *l == ell {
                d += (phi * phi.transpose()).map(|x| c(x * lam));
            }
        }
        d
    }

    /// M±(η⁴+η²) in sector ℓ with the declared-zero eigenvalues removed.
    pub fn deflated_m(&self, sign: BoundarySign, eta: f64, pot: &Potential, grid: &Arc<RadialGrid>, ell: usize) -> Result<CMat> {
        Ok(build_m(sign, eta, pot, grid, ell)?.matrix - self.deflation_matrix(ell, grid.count))
    }
}

/// Least-squares fit window and sample count for case iii blocks.
pub const FIT_WINDOW: [f64; 2] = [1e-3, 1e-2];
const FIT_SAMPLES: usize = 8;

pub fn leading_coefficients(cls: &Classification, pot: &Potential, grid: &Arc<RadialGrid>) -> Result<ExpansionCoefficients> {
    if cls.verdict == Verdict::Indeterminate {
        return Err(Error::Precondition("classification is indeterminate".into()));
    }
    let lmax = cls.ell_max;
    let n = grid.count;
    let norm = pot.l1_norm(grid);
    let a = norm / (4.0 * PI);
    let deflation: Vec<(usize, f64, DVector<f64>)> =
        cls.s1_basis.iter().map(|nv| (nv.ell, nv.eigenvalue, DVector::from_vec(nv.coefficients.clone()))).collect();
    let mut out = ExpansionCoefficients { case: Case::Regular, norm_l1: norm, sectors: Vec::new(), deflation };
    let t0s = build_t0_sectors(pot, grid, lmax)?;
    let p = if norm > 0.0 { build_p(pot, grid)?.matrix } else { CMat::zeros(n, n) };
    let mut g2: Option<Vec<CMat>> = None;
    let mut g3: Option<Vec<CMat>> = None;

    for (l, t0) in t0s.iter().enumerate() {
        let t0 = &t0.matrix - out.deflation_matrix(l, n);
        let phi = Classification::basis(&cls.s1_basis, l);
        let psi = Classification::basis(&cls.s2_basis, l);
        let exp = match (phi, psi) {
            (None, _) => {
                let t0_inv = checked_inverse(&t0, "T₀")?;
                let first_order = if l == 0 { &t0_inv * &p * &t0_inv * (-I * a) } else { CMat::zeros(n, n) };
                SectorExpansion::Regular { t0_inv, first_order }
            }
            (Some(phi), None) => {
                let phi = phi.map(c);
                let s = &phi * phi.adjoint();
                let d0 = checked_inverse(&(&t0 + &s), "T₀ + S₁")?;
                let t1_inv = &phi * checked_inverse(&(phi.adjoint() * &p * &phi), "T₁")? * phi.adjoint();
                let g2 = g2.get_or_insert_with(|| g_sandwich(2, pot, grid, lmax).unwrap());
                let u = p_vector(pot, grid)?.map(c);
                let rho = (u.adjoint() * &d0 * &u)[(0, 0)].re;
                let m_minus1 = &t1_inv * (-I * (1.0 / a));
                let m0 = &d0 + &t1_inv * c(rho) + &t1_inv * &g2[l] * &t1_inv * c(1.0 / (a * a))
                    - &d0 * &p * &t1_inv
                    - &t1_inv * &p * &d0;
                SectorExpansion::Resonance { m_minus1, m0, rho }
            }
            (Some(phi), Some(psi)) => {
                let psi = psi.map(c);
                let g2 = g2.get_or_insert_with(|| g_sandwich(2, pot, grid, lmax).unwrap());
                let a_minus2 = &psi * checked_inverse(&(psi.adjoint() * &g2[l] * &psi), "S₂vG₂vS₂")? * psi.adjoint();
                let a_minus1_closed = if psi.ncols() == phi.ncols() {
                    let g3 = g3.get_or_insert_with(|| g_sandwich(3, pot, grid, lmax).unwrap());
                    Some(&a_minus2 * &g3[l] * &a_minus2 * (-I))
                } else {
                    None
                };
                let (a_minus1, a0, fit_residual) = fit_eigenvalue_blocks(&out, pot, grid, l, &a_minus2)?;
                SectorExpansion::Eigenvalue { a_minus2, a_minus1, a0, a_minus1_closed, fit_residual, surrogate: true }
            }
        };
        out.case = out.case.max(exp.case());
        out.sectors.push(exp);
    }
    Ok(out)
}

/// Fits η²(M⁺)⁻¹ ≈ C₀ + ηC₁ + η²C₂ on [`FIT_WINDOW`], returning (C₁, C₂) and
/// the worst residual relative to the O(η³) envelope.
fn fit_eigenvalue_blocks(
    exp: &ExpansionCoefficients,
    pot: &Potential,
    grid: &Arc<RadialGrid>,
    ell: usize,
    a_minus2: &CMat,
) -> Result<(CMat, CMat, f64)> {
    let [lo, hi] = FIT_WINDOW;
    let etas: Vec<f64> = crate::fit::log_grid(lo, hi, FIT_SAMPLES);
    let ys: Vec<CMat> = etas
        .iter()
        .map(|&e| {
            let m = exp.deflated_m(BoundarySign::Plus, e, pot, grid, ell)?;
            let inv = m.lu().try_inverse().ok_or_else(|| Error::Singular("M⁺(η) in the fit window".into()))?;
            Ok(inv * c(e * e))
        })
        .collect::<Result<_>>()?;
    // basis in x = η/hi keeps the design matrix well conditioned
    let b = DMatrix::from_fn(etas.len(), 3, |i, k| (etas[i] / hi).powi(k as i32));
    let pinv = b.clone().pseudo_inverse(1e-14).map_err(|e| Error::Fit(e.to_string()))?;
    let (n, m) = a_minus2.shape();
    let mut coef = [CMat::zeros(n, m), CMat::zeros(n, m), CMat::zeros(n, m)];
    for (k, ck) in coef.iter_mut().enumerate() {
        for (i, y) in ys.iter().enumerate() {
            *ck += y * c(pinv[(k, i)]);
        }
        *ck *= c(hi.powi(-(k as i32)));
    }
    let scale = coef.iter().map(|m| m.norm()).sum::<f64>();
    let mut worst: f64 = 0.0;
    for (e, y) in etas.iter().zip(&ys) {
        let r = (y - &coef[0] - &coef[1] * c(*e) - &coef[2] * c(e * e)).norm();
        worst = worst.max(r / (scale * e.powi(3)));
    }
    if worst > 10.0 {
        return Err(Error::ExpansionMismatch(format!("fit residual is {worst:.2}× the η³ envelope")));
    }
    let drift = (&coef[0] - a_minus2).norm() / a_minus2.norm();
    if drift > 1e-3 {
        return Err(Error::ExpansionMismatch(format!("fitted η⁻² block deviates from the closed form by {drift:.2e}")));
    }
    let [_, c1, c2] = coef;
    Ok((c1, c2, worst))
}

/// Critical coupling located by [`resonance_tune`].
#[derive(Debug, Clone, Serialize)]
pub struct Tuned {
    pub c_star: f64,
    pub ell: usize,
    pub null_vector: Vec<f64>,
    /// Eigenvalue of T₀(c*) nearest zero.
    pub residual_eigenvalue: f64,
    pub sigma_max: f64,
    pub bracket: [f64; 2],
}

struct SectorT0 {
    g0: DMatrix<f64>,
    grid: Arc<RadialGrid>,
}

impl SectorT0 {
    fn new(grid: &Arc<RadialGrid>, ell: usize) -> Self {
        let op = build_sector_operators(&|s| g_unchecked(0, s), ell, grid, 1.0).pop().unwrap();
        Self { g0: real_part(&op.matrix), grid: Arc::clone(grid) }
    }

    fn eig(&self, pot: &Potential) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
        let s = sample(pot, &self.grid)?;
        let n = self.grid.count;
        let t0 = DMatrix::from_fn(n, n, |i, j| self.g0[(i, j)] * s.v[i] * s.v[j] + if i == j { s.u[i] } else { 0.0 });
        Ok(SymmetricEigen::new(t0))
    }
}

fn positive_count(e: &SymmetricEigen<f64, nalgebra::Dyn>) -> usize {
    e.eigenvalues.iter().filter(|&&x| x > 0.0).count()
}

fn nearest_zero(e: &SymmetricEigen<f64, nalgebra::Dyn>) -> usize {
    e.eigenvalues.iamin()
}

/// Smallest eigenvalue of U·T₀ in sector `ell` for a single-signed potential;
/// it decreases through zero as a well deepens past a critical coupling.
pub fn birman_schwinger_floor(pot: &Potential, grid: &Arc<RadialGrid>, ell: usize) -> Result<f64> {
    let e = SectorT0::new(grid, ell).eig(pot)?;
    let s = sample(pot, grid)?;
    if s.u.iter().any(|&x| x != s.u[0]) {
        return Err(Error::Precondition("potential changes sign".into()));
    }
    Ok(e.eigenvalues.iter().map(|x| x * s.u[0]).fold(f64::INFINITY, f64::min))
}

/// Bisects on the inertia of T₀(c) in sector `ell` and finishes with a
/// secant step on the eigenvalue that crosses zero.
pub fn resonance_tune(
    family: &dyn Fn(f64) -> Potential,
    ell: usize,
    bracket: [f64; 2],
    grid: &Arc<RadialGrid>,
    tol: f64,
) -> Result<Tuned> {
    let [mut lo, mut hi] = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Bracket(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return domain(format!("tol must lie in (0, 1), got {tol}"));
    }
    let st = SectorT0::new(grid, ell);
    let e_lo = st.eig(&family(lo))?;
    let e_hi = st.eig(&family(hi))?;
    let n_lo = positive_count(&e_lo);
    if positive_count(&e_hi) == n_lo {
        return Err(Error::Bracket(format!("no eigenvalue of T₀ changes sign on [{lo}, {hi}] in sector {ell}")));
    }
    while hi - lo > tol * hi.abs().max(lo.abs()) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if positive_count(&st.eig(&family(mid))?) == n_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (el, eh) = (st.eig(&family(lo))?, st.eig(&family(hi))?);
    let (fl, fh) = (el.eigenvalues[nearest_zero(&el)], eh.eigenvalues[nearest_zero(&eh)]);
    let mut c_star = if fh != fl { lo - fl * (hi - lo) / (fh - fl) } else { 0.5 * (lo + hi) };
    if !(c_star >= lo && c_star <= hi) {
        c_star = 0.5 * (lo + hi);
    }
    let mut e = st.eig(&family(c_star))?;
    let mut k = nearest_zero(&e);
    // one more secant step against whichever end is on the other side
    let f = e.eigenvalues[k];
    let (c2, f2) = if f.signum() == fl.signum() { (hi, fh) } else { (lo, fl) };
    if f2 != f {
        let c3 = c_star - f * (c2 - c_star) / (f2 - f);
        if c3 >= lo && c3 <= hi {
            let e3 = st.eig(&family(c3))?;
            let k3 = nearest_zero(&e3);
            if e3.eigenvalues[k3].abs() < f.abs() {
                c_star = c3;
                e = e3;
                k = k3;
            }
        }
    }
    let sigma_max = e.eigenvalues.amax();
    Ok(Tuned {
        c_star,
        ell,
        null_vector: e.eigenvectors.column(k).iter().copied().collect(),
        residual_eigenvalue: e.eigenvalues[k],
        sigma_max,
        bracket: [lo, hi],
    })
}

/// Scans c = c0·factor^k until the inertia of T₀(c) in sector `ell` changes.
pub fn scan_bracket(
    family: &dyn Fn(f64) -> Potential,
    ell: usize,
    grid: &Arc<RadialGrid>,
    c0: f64,
    factor: f64,
    max_steps: usize,
) -> Result<[f64; 2]> {
    let st = SectorT0::new(grid, ell);
    let n0 = positive_count(&st.eig(&family(c0))?);
    let mut prev = c0;
    for _ in 0..max_steps {
        let next = prev * factor;
        if positive_count(&st.eig(&family(next))?) != n0 {
            return Ok([prev, next]);
        }
        prev = next;
    }
    Err(Error::Bracket(format!("no crossing in sector {ell} up to c = {prev}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waves::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Arc<RadialGrid> {
        Arc::new(build_grid(n, Some(6.0), 20.0).unwrap())
    }

    fn well(c: f64) -> Potential {
        Potential::gaussian_well(c)
    }

    fn tuned(ell: usize, g: &Arc<RadialGrid>) -> Tuned {
        let br = scan_bracket(&well, ell, g, 1.0, 1.5, 60).unwrap();
        resonance_tune(&well, ell, br, g, 1e-13).unwrap()
    }

    fn slope(xs: &[f64], ys: &[f64]) -> f64 {
        let s: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        crate::fit::fit_decay(&s).unwrap().exponent
    }

    #[test]
    fn zero_potential() {
        let g = grid(16);
        let m = build_m(BoundarySign::Plus, 0.7, &Potential::zero(), &g, 1).unwrap();
        assert_eq!(m.matrix, CMat::identity(16, 16));
        let s = singular_values(&m.matrix);
        assert!((s.min() - 1.0).abs() < 1e-15);
        assert!(build_p(&Potential::zero(), &g).is_err());
        let cls = classify(&Potential::zero(), &g, 2, DEFAULT_NULL_TOL).unwrap();
        assert_eq!(cls.verdict, Verdict::Regular);
        assert!(build_m(BoundarySign::Plus, -1.0, &well(1.0), &g, 0).is_err());
    }

    #[test]
    fn potential_validation() {
        assert!(Potential::new(Profile::Gaussian { width: 0.0 }, 4.0, 1.0).is_err());
        assert!(Potential::new(Profile::Exponential { rate: 1.0 }, -1.0, 1.0).is_err());
        let p = Potential::new(Profile::PolynomialDecay { exponent: 4.0 }, 4.0, -2.0).unwrap();
        assert_eq!(p.u(1.0), -1.0);
        assert!((p.v(1.0) - (2.0f64 / 16.0).sqrt()).abs() < 1e-15);
        assert!((p.envelope_constant(&grid(16)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conjugation_and_t0() {
        let g = grid(24);
        let pot = well(2.0);
        for l in 0..3 {
            let p = build_m(BoundarySign::Plus, 0.9, &pot, &g, l).unwrap().matrix;
            let m = build_m(BoundarySign::Minus, 0.9, &pot, &g, l).unwrap().matrix;
            assert_eq!(p.map(|z| z.conj()), m);
            let t0 = build_t0(&pot, &g, l).unwrap().matrix;
            let m0 = build_m(BoundarySign::Plus, 0.0, &pot, &g, l).unwrap().matrix;
            assert!((&t0 - &m0).iter().all(|z| z.norm() < 1e-12));
            assert!((t0.transpose() - &t0).norm() < 1e-12 && t0.iter().all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn repulsive_t0_is_positive() {
        let g = grid(24);
        let pot = Potential::new(Profile::Gaussian { width: 1.0 }, 20.0, 3.0).unwrap();
        let s = sample(&pot, &g).unwrap();
        let vgv = real_part(&g_sandwich(0, &pot, &g, 0).unwrap()[0]);
        let bound = 1.0 - vgv.norm();
        let t0 = real_part(&build_t0(&pot, &g, 0).unwrap().matrix);
        let lam = SymmetricEigen::new(t0).eigenvalues.min();
        assert!(s.u.iter().all(|&u| u == 1.0));
        assert!(lam >= bound && lam >= 1.0 - 1e-12, "{lam}");
    }

    #[test]
    fn compactness_proxy() {
        let g = grid(48);
        let vrv = &kernel_sandwich(&|s| r0(BoundarySign::Plus, 1.0, s), &well(1.0), &g, 0, 1.0).unwrap()[0];
        let s = singular_values(vrv);
        let mut v: Vec<f64> = s.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let first = v.iter().position(|&x| x < 1e-8).unwrap();
        assert!(first <= 24 + 2, "{first}");
    }

    #[test]
    fn projection_p() {
        let g = grid(32);
        let pot = Potential::new(Profile::Exponential { rate: 1.5 }, 20.0, -0.7).unwrap();
        let p = build_p(&pot, &g).unwrap().matrix;
        assert!((&p * &p - &p).norm() < 1e-12);
        assert!((p.trace().re - 1.0).abs() < 1e-10);
        let s = sample(&pot, &g).unwrap();
        let vv = DVector::from_iterator(32, g.sqrt_measure().iter().zip(&s.v).map(|(m, v)| c(m * v)));
        assert!((&p * &vv - &vv).norm() < 1e-12 * vv.norm());
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        CMat::from_fn(n, n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_projection(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CMat {
        let q = random_matrix(rng, n).qr().q();
        let qk = q.columns(0, k).into_owned();
        &qk * qk.adjoint()
    }

    #[test]
    fn jn_without_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 20);
        let m = &a + a.adjoint() + CMat::identity(20, 20) * c(12.0);
        let inv = jn_invert_matrix(&m, &CMat::zeros(20, 20)).unwrap();
        let direct = m.clone().lu().try_inverse().unwrap();
        assert!((inv - &direct).norm() < 1e-10 * direct.norm());
    }

    #[test]
    fn jn_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 30);
        let s = random_projection(&mut rng, 30, 3);
        let inv = jn_invert_matrix(&m, &s).unwrap();
        assert!((inv * &m - CMat::identity(30, 30)).norm() < 1e-9);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(5..25);
            let k = rng.random_range(1..n);
            let m = random_matrix(&mut rng, n) + CMat::identity(n, n) * c(2.0);
            let s = random_projection(&mut rng, n, k);
            let direct = m.clone().lu().try_inverse().unwrap();
            let jn = jn_invert_matrix(&m, &s).unwrap();
            worst = worst.max((jn - &direct).norm() / direct.norm());
        }
        assert!(worst < 1e-9, "{worst:e}");
    }

    #[test]
    fn jn_detects_singular_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_projection(&mut rng, 12, 2);
        let b = random_matrix(&mut rng, 12);
        let a = &b * b.adjoint() + CMat::identity(12, 12);
        let q = CMat::identity(12, 12) - &s;
        let m = &q * a * &q;
        match jn_invert_matrix(&m, &s) {
            Err(Error::Singular(msg)) => assert!(msg.contains("M₁"), "{msg}"),
            other => panic!("expected a singularity error, got {other:?}"),
        }
        assert!(matches!(jn_invert_matrix(&m, &(s * c(2.0))), Err(Error::Precondition(_))));
    }

    #[test]
    fn tuning_monotone_and_certified() {
        let g = grid(40);
        let t = tuned(0, &g);
        assert!(t.c_star > 0.0);
        assert!(t.residual_eigenvalue.abs() < 1e-8 * t.sigma_max, "{:e}", t.residual_eigenvalue);
        let floors: Vec<f64> =
            (0..10).map(|k| birman_schwinger_floor(&well(t.c_star * (0.5 + 0.1 * k as f64)), &g, 0).unwrap()).collect();
        assert!(floors.windows(2).all(|w| w[1] < w[0]), "{floors:?}");
        assert!(floors[4] > 0.0 && floors[6] < 0.0);
        assert!(matches!(resonance_tune(&well, 0, [0.01, 0.02], &g, 1e-10), Err(Error::Bracket(_))));
    }

    #[test]
    fn tuning_is_grid_stable() {
        let a = tuned(0, &grid(32)).c_star;
        let b = tuned(0, &grid(64)).c_star;
        assert!((a - b).abs() < 5e-3 * b, "{a} {b}");
    }

    #[test]
    fn classification_chain() {
        let g = grid(40);
        let t = tuned(0, &g);
        let below = classify(&well(t.c_star * 0.999), &g, 2, DEFAULT_NULL_TOL).unwrap();
        assert_eq!(below.verdict, Verdict::Regular);
        let at = classify(&well(t.c_star), &g, 2, DEFAULT_NULL_TOL).unwrap();
        assert_eq!(at.verdict, Verdict::Resonance, "{:?}", at.diagnostics);
        assert_eq!(at.s1_basis.len(), 1);
        assert!(at.s1_basis[0].v_overlap.abs() > 0.1);
        assert!(at.t1_singular_values[0] > DEFAULT_NULL_TOL);
        assert!(at.sectors[0].gap_ratio.unwrap() > 1e6);

        // the zero mode decays like 1/r
        let phi = &at.s1_basis[0];
        let rs = [20.0, 40.0, 80.0];
        let psi = zero_mode(&well(t.c_star), &g, phi, &rs).unwrap();
        let rpsi: Vec<f64> = rs.iter().zip(&psi).map(|(r, p)| r * p).collect();
        assert!((rpsi[2] / rpsi[0] - 1.0).abs() < 1e-3 && rpsi[0].abs() > 1e-3, "{rpsi:?}");

        let t1 = tuned(1, &g);
        let p1 = well(t1.c_star);
        let cls = classify(&p1, &g, 2, DEFAULT_NULL_TOL).unwrap();
        assert_eq!(cls.verdict, Verdict::Eigenvalue, "{:?}", cls.sectors);
        assert!(cls.s2_basis.iter().all(|n| n.ell == 1 && n.v_overlap.abs() < DEFAULT_NULL_TOL));
        assert!(cls.t2_smallest_singular_values.iter().all(|&(_, s)| s > DEFAULT_NULL_TOL));
        let psi = zero_mode(&p1, &g, &cls.s2_basis[0], &rs).unwrap();
        assert!((rs[2] * psi[2]).abs() < 0.3 * (rs[0] * psi[0]).abs());

        let blurred = classify(&well(t.c_star * (1.0 + 1e-7)), &g, 0, 1e-7);
        assert!(blurred.is_ok());
    }

    #[test]
    fn indeterminate_band() {
        let g = grid(40);
        let t = tuned(0, &g);
        let pot = well(t.c_star);
        // detune so the would-be null singular value sits on the threshold
        let off = well(t.c_star * (1.0 + 1e-5));
        let probe = classify(&off, &g, 0, DEFAULT_NULL_TOL).unwrap();
        let s = probe.sectors[0].smallest_singular_values[0] / probe.sectors[0].sigma_max;
        assert!(s > 3.0 * DEFAULT_NULL_TOL && s < 0.1, "{s}");
        assert_eq!(probe.verdict, Verdict::Regular);
        let amb = classify(&off, &g, 0, s * 1.5).unwrap();
        assert_eq!(amb.verdict, Verdict::Indeterminate);
        assert!(!amb.diagnostics.is_empty());
        assert!(leading_coefficients(&amb, &pot, &g).is_err());
        assert_eq!(classify(&pot, &g, 0, DEFAULT_NULL_TOL).unwrap().verdict, Verdict::Resonance);
    }

    #[test]
    fn regular_expansion() {
        let g = grid(32);
        let pot = Potential::new(Profile::Gaussian { width: 1.0 }, 20.0, 0.5).unwrap();
        let cls = classify(&pot, &g, 1, DEFAULT_NULL_TOL).unwrap();
        let exp = leading_coefficients(&cls, &pot, &g).unwrap();
        assert_eq!(exp.case, Case::Regular);
        let SectorExpansion::Regular { t0_inv, first_order } = &exp.sectors[0] else { panic!() };
        let direct = build_t0(&pot, &g, 0).unwrap().matrix.lu().try_inverse().unwrap();
        assert!((t0_inv - &direct).norm() < 1e-10 * direct.norm());
        let sv = singular_values(first_order);
        assert!(sv.iter().filter(|&&s| s > 1e-12 * sv.max()).count() == 1);

        let etas = crate::fit::log_grid(1e-3, 1e-1, 7);
        for sign in [BoundarySign::Plus, BoundarySign::Minus] {
            let errs: Vec<f64> = etas
                .iter()
                .map(|&e| {
                    let inv = build_m(sign, e, &pot, &g, 0).unwrap().matrix.try_inverse().unwrap();
                    (inv - exp.sectors[0].leading(e, sign)).norm()
                })
                .collect();
            let k = slope(&etas, &errs);
            assert!((k - 2.0).abs() < 0.2, "{k}");
        }
    }

    #[test]
    fn resonance_expansion() {
        let g = grid(40);
        let t = tuned(0, &g);
        let pot = well(t.c_star);
        let cls = classify(&pot, &g, 0, DEFAULT_NULL_TOL).unwrap();
        let exp = leading_coefficients(&cls, &pot, &g).unwrap();
        assert_eq!(exp.case, Case::Resonance);
        assert!(exp.rho().unwrap().is_finite());
        let SectorExpansion::Resonance { m_minus1, .. } = &exp.sectors[0] else { panic!() };
        // ∓i × real symmetric: skew-adjoint, and the two signs are conjugate negatives
        assert!((m_minus1.adjoint() + m_minus1).norm() < 1e-10 * m_minus1.norm());

        let etas = crate::fit::log_grid(1e-3, 1e-1, 7);
        let mut errs = Vec::new();
        let mut norms = Vec::new();
        for &e in &etas {
            let inv = exp.deflated_m(BoundarySign::Plus, e, &pot, &g, 0).unwrap().try_inverse().unwrap();
            errs.push((&inv - exp.sectors[0].leading(e, BoundarySign::Plus)).norm());
            let raw = build_m(BoundarySign::Plus, e, &pot, &g, 0).unwrap().matrix.try_inverse().unwrap();
            norms.push(raw.norm());
        }
        let k = slope(&etas, &errs);
        assert!((k - 1.0).abs() < 0.2, "remainder slope {k}: {errs:?}");
        let b = slope(&etas, &norms);
        assert!((b + 1.0).abs() < 0.15, "blow-up slope {b}");
    }

    #[test]
    fn eigenvalue_expansion() {
        let g = grid(40);
        let t = tuned(1, &g);
        let pot = well(t.c_star);
        let cls = classify(&pot, &g, 1, DEFAULT_NULL_TOL).unwrap();
        let exp = leading_coefficients(&cls, &pot, &g).unwrap();
        assert_eq!(exp.case, Case::Eigenvalue);
        let SectorExpansion::Eigenvalue { a_minus2, a_minus1, a_minus1_closed, .. } = &exp.sectors[1] else { panic!() };
        assert!((a_minus2.adjoint() - a_minus2).norm() < 1e-10 * a_minus2.norm());
        let closed = a_minus1_closed.as_ref().unwrap();
        assert!((a_minus1 - closed).norm() < 1e-3 * closed.norm(), "{} vs {}", a_minus1.norm(), closed.norm());

        let etas = crate::fit::log_grid(1e-3, 1e-1, 7);
        let mut scaled = Vec::new();
        let mut norms = Vec::new();
        for &e in &etas {
            let inv = build_m(BoundarySign::Plus, e, &pot, &g, 1).unwrap().matrix.try_inverse().unwrap();
            scaled.push((&inv - a_minus2 * c(e.powi(-2))).norm() * e);
            norms.push(inv.norm());
        }
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi < 3.0 * lo, "{scaled:?}");
        let b = slope(&etas, &norms);
        assert!((b + 2.0).abs() < 0.2, "blow-up slope {b}");
    }
}
