//! Angular-momentum reduction of rotation-invariant kernels K(|x − y|).
//!
//! A sector kernel is K_ℓ(r, r′) = 2π ∫₋₁¹ K(√(r² + r′² − 2rr′μ)) P_ℓ(μ) dμ and
//! the full kernel is recovered as Σ_ℓ (2ℓ+1)/(4π) K_ℓ(r, r′) P_ℓ(cos γ).
//! On a radial Gauss grid the sector operator is stored symmetrized,
//! A_ij = √w_i r_i K_ℓ(r_i, r_j) r_j √w_j, so that Euclidean algebra on
//! coefficient vectors is L²(r² dr) algebra on functions.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::quad::Rule;

/// Scalars a sector projection can produce.
pub trait SectorScalar: Copy + Send + Sync + std::ops::Add<Output = Self> {
    fn zero() -> Self;
    fn scale(self, s: f64) -> Self;
    fn to_complex(self) -> Complex64;
}

impl SectorScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl SectorScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn to_complex(self) -> Complex64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub r_max: f64,
    pub count: usize,
}

impl RadialGrid {
    /// √w_i · r_i, the factor that symmetrizes a Nyström matrix.
    pub fn sqrt_measure(&self) -> Vec<f64> {
        self.nodes.iter().zip(&self.weights).map(|(r, w)| w.sqrt() * r).collect()
    }

    /// Σ w_i f(r_i) r_i², the discrete ∫ f r² dr.
    pub fn integrate_r2(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&r, &w)| w * r * r * f(r)).sum()
    }
}

/// Default truncation radius: where (1 + r)^{−β/2} drops below 1e−8.
pub fn default_r_max(beta: f64) -> f64 {
    10f64.powf(16.0 / beta) - 1.0
}

/// Gauss–Legendre grid on (0, r_max]. With `r_max = None` the radius comes
/// from [`default_r_max`].
pub fn build_grid(count: usize, r_max: Option<f64>, beta: f64) -> Result<RadialGrid> {
    if count < 8 {
        return domain(format!("grid needs at least 8 nodes, got {count}"));
    }
    let r_max = match r_max {
        Some(r) => r,
        None => {
            if !(beta > 0.0 && beta.is_finite()) {
                return domain(format!("decay exponent must be positive, got {beta}"));
            }
            default_r_max(beta)
        }
    };
    if !(r_max > 0.0 && r_max.is_finite()) {
        return domain(format!("r_max must be positive and finite, got {r_max}"));
    }
    let rule = Rule::gauss_legendre(count);
    let (nodes, weights) = rule.mapped(0.0, r_max).unzip();
    Ok(RadialGrid { nodes, weights, r_max, count })
}

/// P_0..=P_lmax at x by upward recurrence, written into `out`.
#[inline]
pub fn legendre_all(lmax: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if lmax == 0 {
        return;
    }
    out[1] = x;
    for n in 1..lmax {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0);
    }
}

pub fn legendre(ell: usize, x: f64) -> f64 {
    let mut p = vec![0.0; ell + 1];
    legendre_all(ell, x, &mut p);
    p[ell]
}

/// Quadrature in μ for a fixed pair (r, r′), written in σ with μ = 1 − σ².
///
/// In σ the separation is √((r − r′)² + 2rr′σ²), which is smooth at the
/// μ = 1 end when r = r′. Panels are graded geometrically away from the
/// near-singular scale σ₀ = |r − r′|/√(2rr′) and capped in width so a
/// kernel oscillating like e^{i·freq·s} changes phase by at most π per
/// panel. Weights include the 2π and the 2σ dσ Jacobian.
#[derive(Debug, Clone)]
pub struct MuRule {
    pub mu: Vec<f64>,
    pub sep: Vec<f64>,
    pub weight: Vec<f64>,
}

impl MuRule {
    pub fn new(r: f64, rp: f64, order: usize, freq: f64) -> Self {
        let rule = Rule::gauss_legendre(order);
        let rr = 2.0 * r * rp;
        if rr == 0.0 {
            // the separation does not depend on μ; one node integrates exactly
            return Self { mu: vec![0.0], sep: vec![r.max(rp)], weight: vec![4.0 * PI] };
        }
        let d = r - rp;
        let top = 2f64.sqrt();
        let scale = rr.sqrt();
        let max_width = (PI / (freq.max(1.0) * scale)).min(top);

        let mut cuts = vec![0.0];
        let s0 = d.abs() / scale;
        if s0 > 1e-12 && s0 < top {
            let mut c = s0;
            while c < top {
                cuts.push(c);
                c *= 2.0;
            }
        }
        cuts.push(top);
        let mut edges = vec![0.0];
        for w in cuts.windows(2) {
            let n = ((w[1] - w[0]) / max_width).ceil().max(1.0) as usize;
            for k in 1..=n {
                edges.push(w[0] + (w[1] - w[0]) * k as f64 / n as f64);
            }
        }

        let cap = (edges.len() - 1) * order;
        let (mut mu, mut sep, mut weight) = (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
        for e in edges.windows(2) {
            for (sg, w) in rule.mapped(e[0], e[1]) {
                mu.push(1.0 - sg * sg);
                sep.push((d * d + rr * sg * sg).sqrt());
                weight.push(2.0 * PI * 2.0 * sg * w);
            }
        }
        Self { mu, sep, weight }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// K_0..=K_lmax from a single sampling of the kernel.
    pub fn project_all<T: SectorScalar>(&self, kernel: &impl Fn(f64) -> T, lmax: usize) -> Vec<T> {
        let mut out = vec![T::zero(); lmax + 1];
        let mut p = vec![0.0; lmax + 1];
        for k in 0..self.len() {
            let v = kernel(self.sep[k]).scale(self.weight[k]);
            legendre_all(lmax, self.mu[k], &mut p);
            for (o, &pl) in out.iter_mut().zip(&p) {
                *o = *o + v.scale(pl);
            }
        }
        out
    }
}

/// Per-panel Gauss order used when projecting every ℓ ≤ lmax at once.
pub fn default_mu_order(lmax: usize) -> usize {
    2 * lmax + 16
}

/// K_ℓ(r, r′) for a single ℓ with `n_mu` Gauss points per σ-panel.
pub fn legendre_project<T: SectorScalar>(
    kernel: impl Fn(f64) -> T,
    ell: usize,
    r: f64,
    r_prime: f64,
    n_mu: usize,
) -> Result<T> {
    if n_mu < 2 * ell + 16 {
        return domain(format!("n_mu must be at least 2ℓ + 16 = {}, got {n_mu}", 2 * ell + 16));
    }
    if !(r >= 0.0 && r_prime >= 0.0 && r.is_finite() && r_prime.is_finite()) {
        return domain("radii must be finite and nonnegative");
    }
    let rule = MuRule::new(r, r_prime, n_mu, 1.0);
    let all = rule.project_all(&kernel, ell);
    Ok(all[ell])
}

/// All K_ℓ(r, r′), ℓ ≤ lmax, with the μ-rule sized for oscillation `freq`.
pub fn project_all<T: SectorScalar>(kernel: &impl Fn(f64) -> T, lmax: usize, r: f64, r_prime: f64, freq: f64) -> Vec<T> {
    MuRule::new(r, r_prime, default_mu_order(lmax), freq).project_all(kernel, lmax)
}

/// Σ_ℓ (2ℓ+1)/(4π) K_ℓ P_ℓ(cos γ).
pub fn resum_sectors<T: SectorScalar>(sectors: &[T], cos_gamma: f64) -> Result<T> {
    if !(cos_gamma.abs() <= 1.0) {
        return domain(format!("|cos γ| must be ≤ 1, got {cos_gamma}"));
    }
    if sectors.is_empty() {
        return Ok(T::zero());
    }
    let lmax = sectors.len() - 1;
    let mut p = vec![0.0; lmax + 1];
    legendre_all(lmax, cos_gamma, &mut p);
    Ok(sectors
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (l, &k)| acc + k.scale((2 * l + 1) as f64 / (4.0 * PI) * p[l])))
}

/// ℓ-cutoff for pointwise reconstruction of a kernel oscillating at `eta`
/// to roughly `tol`: the oscillatory part needs ℓ ≳ η·r_>, the multipole
/// tail decays like (r_</r_>)^ℓ.
pub fn ell_max_heuristic(eta: f64, r: f64, r_prime: f64, tol: f64) -> usize {
    let (lo, hi) = (r.min(r_prime), r.max(r_prime));
    let geometric = if lo > 0.0 && lo < hi { (tol.ln() / (lo / hi).ln()).ceil() } else { 40.0 };
    ((eta * hi).ceil() + geometric.min(200.0) + 8.0) as usize
}

/// Symmetrized Nyström matrix of one angular-momentum sector.
#[derive(Debug, Clone)]
pub struct SectorOperator {
    pub ell: usize,
    pub grid: Arc<RadialGrid>,
    pub matrix: DMatrix<Complex64>,
}

/// All sectors ℓ ≤ lmax from one pass over the upper triangle.
pub fn build_sector_operators<T: SectorScalar>(
    kernel: &(impl Fn(f64) -> T + Sync),
    lmax: usize,
    grid: &Arc<RadialGrid>,
    freq: f64,
) -> Vec<SectorOperator> {
    let n = grid.count;
    let sm = grid.sqrt_measure();
    let order = default_mu_order(lmax);
    let rows: Vec<Vec<Vec<T>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| MuRule::new(grid.nodes[i], grid.nodes[j], order, freq).project_all(kernel, lmax))
                .collect()
        })
        .collect();
    (0..=lmax)
        .map(|l| {
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = rows[i][j - i][l].to_complex() * (sm[i] * sm[j]);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            SectorOperator { ell: l, grid: Arc::clone(grid), matrix: m }
        })
        .collect()
}

/// A single sector; see [`build_sector_operators`].
pub fn build_sector_operator<T: SectorScalar>(
    kernel: &(impl Fn(f64) -> T + Sync),
    ell: usize,
    grid: &Arc<RadialGrid>,
) -> SectorOperator {
    build_sector_operators(kernel, ell, grid, 1.0).pop().unwrap()
}

/// e_ℓ,i(r) = √w_i r_i K_ℓ(r, r_i) for every ℓ ≤ lmax, at an off-grid radius r.
pub fn sector_rows<T: SectorScalar>(
    kernel: &impl Fn(f64) -> T,
    lmax: usize,
    r: f64,
    grid: &RadialGrid,
    freq: f64,
) -> Vec<Vec<Complex64>> {
    let order = default_mu_order(lmax);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); grid.count]; lmax + 1];
    for (i, (&ri, &wi)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
        let ks = MuRule::new(r, ri, order, freq).project_all(kernel, lmax);
        let f = wi.sqrt() * ri;
        for (l, k) in ks.into_iter().enumerate() {
            out[l][i] = k.to_complex() * f;
        }
    }
    out
}

const MAGIC: &[u8; 8] = b"BSSECTOR";
const FORMAT_VERSION: u32 = 1;

/// Writes magic, version, ℓ, count, r_max and then the row-major matrix as
/// little-endian (re, im) f64 pairs.
pub fn write_operator<W: Write>(op: &SectorOperator, mut w: W) -> Result<()> {
    let n = op.grid.count;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(op.ell as u32).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&op.grid.r_max.to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * n * n);
    for i in 0..n {
        for j in 0..n {
            let z = op.matrix[(i, j)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads an operator written by [`write_operator`]. The grid is rebuilt
/// from (count, r_max), which determines the Gauss nodes.
pub fn read_operator<R: Read>(mut r: R) -> Result<SectorOperator> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut b4)?;
    let ell = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let r_max = f64::from_le_bytes(b8);
    if !(8..=1 << 16).contains(&count) || !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::Format(format!("implausible header: count {count}, r_max {r_max}")));
    }
    let n = count as usize;
    let mut data = vec![0u8; 16 * n * n];
    r.read_exact(&mut data).map_err(|_| Error::Format("truncated matrix payload".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after matrix payload".into()));
    }
    let f = |k: usize| f64::from_le_bytes(data[8 * k..8 * k + 8].try_into().unwrap());
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        let k = 2 * (i * n + j);
        Complex64::new(f(k), f(k + 1))
    });
    let grid = Arc::new(build_grid(n, Some(r_max), 1.0)?);
    Ok(SectorOperator { ell, grid, matrix })
}
