//! Schröder's equation `h(D(x)) = λ h(x)`: the Koenigs limit for `h`, the
//! infinite product for `h'`, fractional iterates `D^t = h⁻¹(λ^t h)` and the
//! field `v = log(λ)·h/h'`.
//!
//! On pieces iterated backward the same construction is applied to `D⁻¹`;
//! the resulting `h` also conjugates `D`, with `λ = D'(p) > 1`.

use crate::domain::{piece_grid, step, step_derivative, Subinterval};
use crate::error::{Error, Result};
use crate::interp::{GridFunction, InterpolationRule};
use crate::numeric::invert_on;
use crate::propagation::PropagationMap;

pub const DEFAULT_GRID: usize = 401;
pub const DEFAULT_TOL: f64 = 1e-14;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Distance to the attractor at which iteration stops: closer in, rounding
/// in `D(x) - p` and `x - p` (relative to the size of `p` and of the piece)
/// outweighs the remaining terms, which are instead summed as a geometric
/// tail.
pub(crate) fn noise_floor(sub: &Subinterval) -> f64 {
    let w = if sub.width().is_finite() { sub.width() } else { 1.0 };
    f64::EPSILON.cbrt() * sub.attractor().abs().max(w)
}

/// Sum of the remaining excesses `e λ + e λ² + …` given the last one `e`.
pub(crate) fn geometric_tail(last_excess: f64, lambda: f64) -> f64 {
    last_excess * lambda / (1.0 - lambda)
}

/// Advance the orbit one step, insisting it moves strictly toward `p`.
pub(crate) fn advance(d: &PropagationMap, sub: &Subinterval, x0: f64, x: f64, n: usize) -> Result<f64> {
    let p = sub.attractor();
    let next = step(d, sub, x).map_err(|_| Error::UndefinedSplinter { x0, step: n })?;
    if !next.is_finite() || (next - p) * (x - p) < 0.0 || (next - p).abs() > (x - p).abs() {
        return Err(Error::UndefinedSplinter { x0, step: n });
    }
    Ok(next)
}

fn check_start(sub: &Subinterval, x: f64) -> Result<()> {
    if x < sub.lo || x > sub.hi {
        return Err(Error::Precondition(format!("x = {x} lies outside [{}, {}]", sub.lo, sub.hi)));
    }
    Ok(())
}

/// Koenigs' limit `λ^{-n}(D^n(x) - p)` toward the attractor `p` of `sub`.
pub fn koenigs_h(d: &PropagationMap, sub: &Subinterval, x: f64, tol: f64, n_max: usize) -> Result<f64> {
    check_start(sub, x)?;
    let p = sub.attractor();
    if x == p {
        return Ok(0.0);
    }
    let lambda = sub.iteration_multiplier();
    let floor = noise_floor(sub);
    let mut xn = x;
    let mut scale = 1.0;
    let mut est = x - p;
    let mut change = f64::INFINITY;
    for n in 1..=n_max {
        xn = advance(d, sub, x, xn, n)?;
        scale /= lambda;
        let next = (xn - p) * scale;
        change = (next - est).abs() / next.abs();
        let last = est;
        est = next;
        if change <= tol || xn == p {
            return Ok(est);
        }
        if (xn - p).abs() <= floor {
            // estimates approach the limit geometrically with ratio λ
            return Ok(est + geometric_tail(est - last, lambda));
        }
    }
    Err(Error::SlowConvergence { what: "Koenigs limit", iterations: n_max, last_change: change })
}

/// `h'(x) = ∏ D'(D^i(x))/λ` along the orbit toward the attractor.
pub fn h_prime_product(d: &PropagationMap, sub: &Subinterval, x: f64, tol: f64, n_max: usize) -> Result<f64> {
    check_start(sub, x)?;
    let p = sub.attractor();
    if x == p {
        return Ok(1.0);
    }
    let lambda = sub.iteration_multiplier();
    let floor = noise_floor(sub);
    let mut xn = x;
    let mut prod = 1.0;
    let mut change = f64::INFINITY;
    for n in 1..=n_max {
        let next = advance(d, sub, x, xn, n)?;
        let slope = step_derivative(d, sub, xn, next);
        if !(slope > 0.0) {
            return Err(Error::NonPositiveFactor { x: xn, value: slope });
        }
        let factor = slope / lambda;
        prod *= factor;
        change = (factor - 1.0).abs();
        xn = next;
        if change <= tol || xn == p {
            return Ok(prod);
        }
        if (xn - p).abs() <= floor {
            return Ok(prod * (1.0 + geometric_tail(factor - 1.0, lambda)));
        }
    }
    Err(Error::SlowConvergence { what: "h' product", iterations: n_max, last_change: change })
}

#[derive(Debug, Clone)]
pub struct ConjugationSolution {
    pub h: GridFunction,
    pub h_prime: GridFunction,
    /// `D'(p)`; below 1 on forward pieces, above 1 on backward ones.
    pub lambda: f64,
    pub base_fixed_point: f64,
    /// `max |h(D(x)) - λh(x)|` over the grid, with `h(D(x))` from the
    /// Koenigs limit rather than the interpolant.
    pub residual_norm: f64,
    sub: Subinterval,
    tol: f64,
    n_max: usize,
}

impl ConjugationSolution {
    /// Tabulate `h` and `h'` on `n` points of `sub` plus the attractor.
    pub fn build(d: &PropagationMap, sub: &Subinterval, n: usize, tol: f64, n_max: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Precondition(format!("grid needs at least 2 points, got {n}")));
        }
        let p = sub.attractor();
        let mut grid = piece_grid(sub, n, &[]);
        grid.push(p);
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        let lambda = sub.multiplier_at_attractor;
        let mut h = Vec::with_capacity(grid.len());
        let mut hp = Vec::with_capacity(grid.len());
        let mut residual: f64 = 0.0;
        for &x in &grid {
            let hx = koenigs_h(d, sub, x, tol, n_max)?;
            let slope = h_prime_product(d, sub, x, tol, n_max)?;
            if !(slope > 0.0) {
                return Err(Error::NotMonotone { x });
            }
            let y = d.eval(x);
            if y >= sub.lo && y <= sub.hi {
                let hy = koenigs_h(d, sub, y, tol, n_max)?;
                residual = residual.max((hy - lambda * hx).abs());
            }
            h.push(hx);
            hp.push(slope);
        }
        Ok(ConjugationSolution {
            h: GridFunction::with_slopes(grid.clone(), h, hp.clone())?,
            h_prime: GridFunction::new(grid, hp, InterpolationRule::MonotoneCubic)?,
            lambda,
            base_fixed_point: p,
            residual_norm: residual,
            sub: sub.clone(),
            tol,
            n_max,
        })
    }

    pub fn subinterval(&self) -> &Subinterval {
        &self.sub
    }

    /// `h/h'` on the grid: the Julia solution with unit slope at `p`.
    pub fn julia_values(&self) -> Vec<f64> {
        self.h.values().iter().zip(self.h_prime.values()).map(|(h, hp)| h / hp).collect()
    }
}

/// Newton steps polishing the interpolated inverse against the
/// pointwise `h` and `h'`.
const FLOW_NEWTON_STEPS: usize = 4;

/// The fractional iterate `D^t(x0) = h⁻¹(λ^t h(x0))`.
pub fn flow(d: &PropagationMap, conj: &ConjugationSolution, x0: f64, t: f64) -> Result<f64> {
    conj.h.eval_in_hull(x0)?;
    let (sub, tol, n_max) = (&conj.sub, conj.tol, conj.n_max);
    let h0 = koenigs_h(d, sub, x0, tol, n_max)?;
    if t == 0.0 || h0 == 0.0 {
        return Ok(x0);
    }
    let target = conj.lambda.powf(t) * h0;
    let (lo, hi) = conj.h.hull();
    let end = if h0 > 0.0 { conj.h.eval(hi) } else { conj.h.eval(lo) };
    let reachable = if h0 > 0.0 { target <= end } else { target >= end };
    if !reachable || !target.is_finite() {
        let t_boundary = (end / h0).ln() / conj.lambda.ln();
        return Err(Error::FlowOutOfRange { t, t_boundary });
    }
    let (a, b) = if h0 > 0.0 { (conj.base_fixed_point, hi) } else { (lo, conj.base_fixed_point) };
    let mut x = invert_on(|x| conj.h.eval(x), target, a, b, 1e-15 * (1.0 + x0.abs()))?;
    for _ in 0..FLOW_NEWTON_STEPS {
        if x == conj.base_fixed_point {
            break;
        }
        let r = koenigs_h(d, sub, x, tol, n_max)? - target;
        let next = (x - r / h_prime_product(d, sub, x, tol, n_max)?).clamp(a, b);
        let done = (next - x).abs() <= 1e-15 * (1.0 + x.abs());
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// `v(x) = log(λ)·h(x)/h'(x)`, per unit step of `D`.
pub fn field_from_h(conj: &ConjugationSolution, x: f64) -> Result<f64> {
    let h = conj.h.eval_in_hull(x)?;
    let hp = conj.h_prime.eval(x);
    if hp.abs() < 1e-300 {
        return Err(Error::DivisionByZero { x });
    }
    Ok(conj.lambda.ln() * h / hp)
}
