//! Stone-formula integrals ∫ e^{−it(η⁴+η²)} f(η) (4η³+2η) dη.
//!
//! Panels are laid out uniformly in u = η⁴ + η², one oscillation period
//! 2π/|t| wide, and integrated with 15-point Gauss–Legendre in η. Working in
//! η inside a panel keeps the rule away from the √u endpoint behaviour at
//! u = 0 while the u-layout keeps the phase per panel bounded. Each panel is
//! also integrated as two halves; the difference is its error estimate and
//! the global adaptive loop bisects whichever panel currently has the
//! largest estimate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::fit::{fit_decay, DecayFit, UNRELIABLE_RESIDUAL};
use crate::quad::{pairwise, Rule};
use crate::spectral::{eta_unchecked, jacobian_unchecked, lambda_unchecked};

pub const PANEL_ORDER: usize = 15;
pub const DEFAULT_MAX_PANELS: usize = 4_000_000;

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| Rule::gauss_legendre(PANEL_ORDER))
}

/// Error target `abs + rel · max_k |I_k|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    /// The contract of [`stone_integral`]: error ≤ tol · (1 + |I|).
    pub fn mixed(tol: f64) -> Self {
        Self { abs: tol, rel: tol }
    }

    pub fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }

    fn target(&self, values: &[Complex64]) -> f64 {
        let big = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        self.abs + self.rel * big
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationPlan {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub tol: f64,
    pub max_panels: usize,
}

impl IntegrationPlan {
    pub fn new(t: f64, a: f64, b: f64, tol: f64) -> Self {
        Self { t, a, b, tol, max_panels: DEFAULT_MAX_PANELS }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t != 0.0) {
            return domain(format!("t must be finite and nonzero, got {}", self.t));
        }
        if !(self.a >= 0.0 && self.a < self.b && self.b.is_finite()) {
            return domain(format!("need 0 ≤ a < b < ∞, got [{}, {}]", self.a, self.b));
        }
        if !(self.tol > 0.0) || self.max_panels == 0 {
            return domain("tolerance and max_panels must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: Complex64,
    pub error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecEstimate {
    pub values: Vec<Complex64>,
    pub error: f64,
    pub panels: usize,
}

/// Panel boundaries on [a, b], uniform in u with spacing at most 2π/|t|.
pub fn panel_boundaries(t: f64, a: f64, b: f64) -> Vec<f64> {
    let (ua, ub) = (lambda_unchecked(a), lambda_unchecked(b));
    let periods = (ub - ua) * t.abs() / (2.0 * PI);
    let n = (periods.ceil() as usize).max(1);
    let mut out = Vec::with_capacity(n + 1);
    out.push(a);
    for j in 1..n {
        out.push(eta_unchecked(ua + (ub - ua) * j as f64 / n as f64));
    }
    out.push(b);
    out
}

/// u(x0 + d) − u(x0) without cancellation.
#[inline]
fn du(x0: f64, d: f64) -> f64 {
    let x = x0 + d;
    d * (x0 + x) * (x * x + x0 * x0 + 1.0)
}

/// Adds Σ w e^{−it(u(x) − u(x0))} h(x) over the rule on [lo, hi] to `out`.
///
/// Nodes are carried as offsets d from x0 so the phase is computed from d
/// rather than from the rounded absolute position; at η ≈ 10 and t ≈ 10³
/// one ulp of η is already 1e-10 rad of phase. The common factor
/// e^{−itu(x0)} is applied by the caller.
fn accumulate<H>(t: f64, x0: f64, lo: f64, hi: f64, h: &H, scratch: &mut [Complex64], out: &mut [Complex64])
where
    H: Fn(f64, &mut [Complex64]),
{
    let r = rule();
    let (off, half) = (lo - x0, 0.5 * (hi - lo));
    for (&z, &w) in r.nodes.iter().zip(&r.weights) {
        let d = off + half * (1.0 + z);
        h(x0 + d, scratch);
        let ph = Complex64::from_polar(w * half, -t * du(x0, d));
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += ph * s;
        }
    }
}

/// Integrates one panel; writes the two-half value into `out` and returns
/// the whole-versus-halves error.
fn eval_panel<H>(t: f64, x0: f64, x1: f64, h: &H, out: &mut [Complex64]) -> f64
where
    H: Fn(f64, &mut [Complex64]),
{
    let m = out.len();
    let mut scratch = vec![Complex64::new(0.0, 0.0); m];
    let mut whole = vec![Complex64::new(0.0, 0.0); m];
    accumulate(t, x0, x0, x1, h, &mut scratch, &mut whole);
    out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
    let xm = 0.5 * (x0 + x1);
    accumulate(t, x0, x0, xm, h, &mut scratch, out);
    accumulate(t, x0, xm, x1, h, &mut scratch, out);
    let err = whole.iter().zip(out.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let base = Complex64::from_polar(1.0, -t * lambda_unchecked(x0));
    out.iter_mut().for_each(|o| *o *= base);
    err
}

#[derive(PartialEq)]
struct HeapItem {
    err: f64,
    idx: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Panel {
    a: f64,
    b: f64,
    err: f64,
    alive: bool,
}

/// Adaptive integral of e^{−itu(η)} h(η) over [a, b] for an m-vector valued
/// amplitude `h`. The amplitude must already contain any Jacobian.
///
/// Initial panels are evaluated in parallel; refinement and the final
/// pairwise summation run in a fixed order, so the result does not depend
/// on the number of threads.
pub fn integrate_phase<H>(
    t: f64,
    a: f64,
    b: f64,
    m: usize,
    tol: Tolerance,
    max_panels: usize,
    h: &H,
) -> Result<VecEstimate>
where
    H: Fn(f64, &mut [Complex64]) + Sync,
{
    let zero = Complex64::new(0.0, 0.0);
    if m == 0 || a == b {
        return Ok(VecEstimate { values: vec![zero; m], error: 0.0, panels: 0 });
    }
    let periods = (lambda_unchecked(b) - lambda_unchecked(a)) * t.abs() / (2.0 * PI);
    if periods > max_panels as f64 {
        return Err(Error::Convergence { estimate: vec![], error: f64::INFINITY, target: tol.abs, panels: 0 });
    }
    let bounds = panel_boundaries(t, a, b);
    let n0 = bounds.len() - 1;

    let mut vals = vec![zero; n0 * m];
    let errs: Vec<f64> = vals
        .par_chunks_mut(m)
        .with_min_len(64)
        .enumerate()
        .map(|(j, out)| eval_panel(t, bounds[j], bounds[j + 1], h, out))
        .collect();
    let mut panels: Vec<Panel> = (0..n0)
        .map(|j| Panel { a: bounds[j], b: bounds[j + 1], err: errs[j], alive: true })
        .collect();

    let totals = |panels: &[Panel], vals: &[Complex64]| -> (Vec<Complex64>, f64) {
        let mut sum = vec![zero; m];
        let mut err = 0.0;
        for (p, v) in panels.iter().zip(vals.chunks(m)) {
            if p.alive {
                err += p.err;
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
        }
        (sum, err)
    };

    let mut heap: BinaryHeap<HeapItem> = panels
        .iter()
        .enumerate()
        .filter(|(_, p)| p.err > 0.0)
        .map(|(idx, p)| HeapItem { err: p.err, idx })
        .collect();
    let (mut integral, mut total_err) = totals(&panels, &vals);
    let mut alive = n0;
    let mut splits = 0usize;
    let mut child = vec![zero; m];

    loop {
        if splits % 4096 == 4095 {
            (integral, total_err) = totals(&panels, &vals);
        }
        if total_err <= tol.target(&integral) {
            break;
        }
        if alive >= max_panels {
            break;
        }
        let Some(item) = heap.pop() else { break };
        let (pa, pb) = (panels[item.idx].a, panels[item.idx].b);
        let mid = 0.5 * (pa + pb);
        if !(mid > pa && mid < pb) || (pb - pa) <= 1e-13 * pb.abs() {
            // cannot be resolved further; its error stays in the total
            continue;
        }
        panels[item.idx].alive = false;
        total_err -= panels[item.idx].err;
        for k in 0..m {
            integral[k] -= vals[item.idx * m + k];
        }
        for (x0, x1) in [(pa, mid), (mid, pb)] {
            let err = eval_panel(t, x0, x1, h, &mut child);
            let idx = panels.len();
            panels.push(Panel { a: x0, b: x1, err, alive: true });
            vals.extend_from_slice(&child);
            total_err += err;
            integral.iter_mut().zip(&child).for_each(|(s, x)| *s += x);
            if err > 0.0 {
                heap.push(HeapItem { err, idx });
            }
        }
        alive += 1;
        splits += 1;
    }

    let mut order: Vec<usize> = (0..panels.len()).filter(|&i| panels[i].alive).collect();
    order.sort_by(|&i, &j| panels[i].a.total_cmp(&panels[j].a));
    let values: Vec<Complex64> = (0..m)
        .map(|k| pairwise(0, order.len(), &|i| vals[order[i] * m + k]))
        .collect();
    let error: f64 = pairwise(0, order.len(), &|i| panels[order[i]].err);
    let target = tol.target(&values);
    if error > target {
        return Err(Error::Convergence { estimate: values, error, target, panels: order.len() });
    }
    Ok(VecEstimate { values, error, panels: order.len() })
}

/// ∫_a^b e^{−it(η⁴+η²)} f(η) (4η³+2η) dη with error ≤ tol · (1 + |I|).
pub fn stone_integral<F>(f: F, plan: &IntegrationPlan) -> Result<Estimate>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    plan.validate()?;
    let h = |x: f64, out: &mut [Complex64]| out[0] = f(x) * jacobian_unchecked(x);
    let est = integrate_phase(plan.t, plan.a, plan.b, 1, Tolerance::mixed(plan.tol), plan.max_panels, &h)?;
    Ok(Estimate { value: est.values[0], error: est.error, panels: est.panels })
}

/// Power-law envelopes |f^{(k)}(η)| ≤ C_k η^{−p_k} for η ≥ `valid_from`,
/// k = 0, 1, 2. `max_eta` caps how far the integrand may be sampled (for
/// example the end of an interpolation table).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEnvelope {
    pub valid_from: f64,
    pub c0: f64,
    pub p0: f64,
    pub c1: f64,
    pub p1: f64,
    pub c2: f64,
    pub p2: f64,
    pub max_eta: f64,
}

impl TailEnvelope {
    /// Envelope of a function that vanishes identically beyond `support_end`.
    pub fn compact(support_end: f64) -> Self {
        Self {
            valid_from: support_end,
            c0: 0.0,
            p0: 1.0,
            c1: 0.0,
            p1: 1.0,
            c2: 0.0,
            p2: 1.0,
            max_eta: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.valid_from, self.c0, self.p0, self.c1, self.p1, self.c2, self.p2]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.c0 < 0.0 || self.c1 < 0.0 || self.c2 < 0.0 {
            return domain("tail envelope constants must be finite and nonnegative");
        }
        if self.p0 < 1.0 {
            return domain(format!("tail envelope needs decay at least η^-1, got p0 = {}", self.p0));
        }
        Ok(())
    }

    /// Bound on (1/t²) ∫_{u(η)}^∞ |g''(u)| du where g(u) = f(η(u)), using
    /// u' ≥ 4η³ and u'' ≤ 14η² for η ≥ 1.
    pub fn remainder_bound(&self, t: f64, eta: f64) -> f64 {
        let e = eta.max(1.0);
        let a = self.c2 * e.powf(-self.p2 - 2.0) / (4.0 * (self.p2 + 2.0));
        let b = 0.875 * self.c1 * e.powf(-self.p1 - 3.0) / (self.p1 + 3.0);
        (a + b) / (t * t)
    }

    /// Smallest η ≥ start where the remainder bound drops below `budget`.
    fn certify(&self, t: f64, start: f64, budget: f64) -> Result<f64> {
        let lo0 = start.max(self.valid_from).max(1.0);
        if self.remainder_bound(t, lo0) <= budget {
            return Ok(lo0);
        }
        let mut hi = lo0;
        for _ in 0..200 {
            hi *= 2.0;
            if self.remainder_bound(t, hi) <= budget || hi > self.max_eta {
                break;
            }
        }
        if self.remainder_bound(t, hi) > budget || hi.min(self.max_eta) < lo0 {
            return Err(Error::Truncation {
                bound: self.remainder_bound(t, hi.min(self.max_eta)),
                tol: budget,
                eta_max: hi.min(self.max_eta),
            });
        }
        let mut lo = hi / 2.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.remainder_bound(t, mid) <= budget {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi > self.max_eta {
            return Err(Error::Truncation {
                bound: self.remainder_bound(t, self.max_eta),
                tol: budget,
                eta_max: self.max_eta,
            });
        }
        Ok(hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    pub values: Vec<Complex64>,
    /// Quadrature error on [a, eta_max].
    pub quadrature_error: f64,
    /// Certified bound on what the two boundary terms leave out.
    pub truncation_bound: f64,
    pub eta_max: f64,
    pub panels: usize,
}

impl TailEstimate {
    pub fn error(&self) -> f64 {
        self.quadrature_error + self.truncation_bound
    }
}

/// ∫_a^∞ e^{−it(η⁴+η²)} f(η)(4η³+2η) dη for an m-vector valued f.
///
/// The integral runs to the η_max certified by `env`; beyond it two exact
/// integration-by-parts terms are added and the remaining ∫|g''| is bounded
/// by the envelope. Half of `tol.abs` goes to truncation, half to quadrature.
pub fn improper_tail_vec<F>(
    f: &F,
    m: usize,
    env: &TailEnvelope,
    t: f64,
    a: f64,
    tol: Tolerance,
    max_panels: usize,
) -> Result<TailEstimate>
where
    F: Fn(f64, &mut [Complex64]) + Sync,
{
    env.validate()?;
    if !(t.is_finite() && t != 0.0) || !(a >= 0.0 && a.is_finite()) || !(tol.abs > 0.0) {
        return domain("improper_tail needs t ≠ 0, finite a ≥ 0 and a positive absolute tolerance");
    }
    let eta_max = env.certify(t, a, 0.5 * tol.abs)?;
    tail_to(f, m, env, t, a, eta_max, Tolerance { abs: 0.5 * tol.abs, rel: tol.rel }, max_panels)
}

/// Same as [`improper_tail_vec`] with the cut point chosen by the caller.
#[allow(clippy::too_many_arguments)]
pub fn tail_to<F>(
    f: &F,
    m: usize,
    env: &TailEnvelope,
    t: f64,
    a: f64,
    eta_max: f64,
    tol: Tolerance,
    max_panels: usize,
) -> Result<TailEstimate>
where
    F: Fn(f64, &mut [Complex64]) + Sync,
{
    let h = |x: f64, out: &mut [Complex64]| {
        f(x, out);
        let j = jacobian_unchecked(x);
        out.iter_mut().for_each(|o| *o *= j);
    };
    let body = if eta_max > a {
        integrate_phase(t, a, eta_max, m, tol, max_panels, &h)?
    } else {
        VecEstimate { values: vec![Complex64::new(0.0, 0.0); m], error: 0.0, panels: 0 }
    };
    let mut values = body.values;
    add_boundary_terms(f, m, t, eta_max, &mut values);
    Ok(TailEstimate {
        values,
        quadrature_error: body.error,
        truncation_bound: env.remainder_bound(t, eta_max),
        eta_max,
        panels: body.panels,
    })
}

/// Adds e^{−itU}[g(U)/(it) + g'(U)/(it)²] with g = f∘η, U = u(eta).
fn add_boundary_terms<F>(f: &F, m: usize, t: f64, eta: f64, values: &mut [Complex64])
where
    F: Fn(f64, &mut [Complex64]),
{
    let zero = Complex64::new(0.0, 0.0);
    let (mut g, mut f1, mut f2) = (vec![zero; m], vec![zero; m], vec![zero; m]);
    // one-sided: only the behaviour beyond eta matters for the tail
    let step = 1e-4 * eta.max(1e-2);
    f(eta, &mut g);
    f(eta + step, &mut f1);
    f(eta + 2.0 * step, &mut f2);
    let up = jacobian_unchecked(eta);
    let it = Complex64::new(0.0, t);
    let ph = Complex64::from_polar(1.0, -t * lambda_unchecked(eta));
    for k in 0..m {
        let df = (f1[k] * 4.0 - g[k] * 3.0 - f2[k]) / (2.0 * step);
        values[k] += ph * (g[k] / it + df / (up * it * it));
    }
}

/// Scalar convenience form of [`improper_tail_vec`], error ≤ tol·(1 + |I|).
pub fn improper_tail<F>(f: F, env: &TailEnvelope, t: f64, a: f64, tol: f64) -> Result<(Estimate, f64)>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    let fv = |x: f64, out: &mut [Complex64]| out[0] = f(x);
    let est = improper_tail_vec(&fv, 1, env, t, a, Tolerance::mixed(tol), DEFAULT_MAX_PANELS)?;
    let e = Estimate { value: est.values[0], error: est.error(), panels: est.panels };
    Ok((e, est.truncation_bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SmallTime,
    LargeTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitPoints {
    pub low_cut: f64,
    pub regime: Regime,
}

/// Low-energy cut: t^{−1/4} for t ≤ 1, t^{−1/2} for t > 1.
pub fn split_points(t: f64) -> Result<SplitPoints> {
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("t must be positive, got {t}"));
    }
    Ok(if t <= 1.0 {
        SplitPoints { low_cut: t.powf(-0.25), regime: Regime::SmallTime }
    } else {
        SplitPoints { low_cut: t.powf(-0.5), regime: Regime::LargeTime }
    })
}

/// Fits the large-t decay of |∫_a^b e^{−it(η⁴+η²)} g(η) dη| over `t_grid`.
/// `support` must contain the effective support of g.
pub fn van_der_corput_probe<G>(g: G, support: (f64, f64), t_grid: &[f64]) -> Result<DecayFit>
where
    G: Fn(f64) -> f64 + Sync,
{
    let h = |x: f64, out: &mut [Complex64]| out[0] = Complex64::new(g(x), 0.0);
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let est = integrate_phase(
            t,
            support.0,
            support.1,
            1,
            Tolerance { abs: 1e-15, rel: 1e-9 },
            DEFAULT_MAX_PANELS,
            &h,
        )?;
        samples.push((t, est.values[0].norm()));
    }
    if samples.iter().all(|s| s.1 == 0.0) {
        return Err(Error::Fit("amplitude integrates to zero at every t".into()));
    }
    let fit = fit_decay(&samples)?;
    if fit.residual > UNRELIABLE_RESIDUAL {
        return Err(Error::Fit(format!(
            "log residual {:.3} above {UNRELIABLE_RESIDUAL}, slope {:.3}",
            fit.residual, fit.exponent
        )));
    }
    Ok(fit)
}
