//! Fixed points of `D`, the subdivision of an interval at them, and
//! splinters (orbits converging to an endpoint fixed point).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{brent, invert_on, linspace, Bracket};
use crate::numeric::ScalarMap;
use crate::propagation::{FixedPoint, PropagationMap};

/// Cells in the sign-change scan for fixed points.
pub const FIXED_POINT_CELLS: usize = 2048;
/// Root refinement tolerance for fixed points.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Interior samples used to confirm the sign of `D(z) - z` on a piece.
pub const SIGN_SAMPLES: usize = 512;
/// Fixed points with `|D'(z) - 1|` below this are not hyperbolic.
pub const HYPERBOLIC_MARGIN: f64 = 1e-6;

/// Tolerance for deciding that `x` is a fixed point: `1e-8 (1 + |x|)`.
pub fn fp_tolerance(x: f64) -> f64 {
    1e-8 * (1.0 + x.abs())
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FixedPointScan {
    pub fixed_points: Vec<FixedPoint>,
    /// Tangential or non-hyperbolic points, excluded from `fixed_points`.
    pub rejected: Vec<FixedPoint>,
}

pub(crate) fn scan_fixed_points(map: &ScalarMap, lo: f64, hi: f64, tol: f64) -> FixedPointScan {
    let f = |z: f64| map.eval(z) - z;
    let xs = linspace(lo, hi, FIXED_POINT_CELLS + 1);
    let fs: Vec<f64> = xs.iter().map(|&z| f(z)).collect();
    let mut roots: Vec<(f64, bool)> = Vec::new();
    for i in 0..xs.len() {
        if fs[i] == 0.0 {
            roots.push((xs[i], false));
            continue;
        }
        if i + 1 < xs.len() && fs[i] * fs[i + 1] < 0.0 {
            let bracket = Bracket { lo: xs[i], hi: xs[i + 1], f_lo: fs[i], f_hi: fs[i + 1] };
            if let Ok(r) = brent(f, bracket, tol) {
                let r = polish(map, r);
                // a sign change across a pole is not a fixed point
                if f(r).abs() <= fp_tolerance(r) {
                    roots.push((r, false));
                }
            }
        }
        let interior_min = i > 0
            && i + 1 < xs.len()
            && fs[i].abs() <= fs[i - 1].abs()
            && fs[i].abs() <= fs[i + 1].abs()
            && fs[i - 1] * fs[i] > 0.0
            && fs[i] * fs[i + 1] > 0.0;
        if interior_min && fs[i].abs() < tol {
            roots.push((xs[i], true));
        }
    }
    roots.sort_by(|a, b| a.0.total_cmp(&b.0));
    roots.dedup_by(|b, a| (b.0 - a.0).abs() <= 1e-9 * (1.0 + a.0.abs()));
    let mut scan = FixedPointScan::default();
    for (location, tangential) in roots {
        let fp = FixedPoint { location, multiplier: map.derivative(location), tangential };
        if tangential || (fp.multiplier - 1.0).abs() < HYPERBOLIC_MARGIN {
            scan.rejected.push(fp);
        } else {
            scan.fixed_points.push(fp);
        }
    }
    scan
}

/// A few Newton steps on `D(z) - z`, kept only while they reduce the
/// residual.
fn polish(map: &ScalarMap, mut r: f64) -> f64 {
    let f = |z: f64| map.eval(z) - z;
    let mut fr = f(r);
    for _ in 0..4 {
        let slope = map.derivative(r) - 1.0;
        if fr == 0.0 || !slope.is_finite() || slope == 0.0 {
            break;
        }
        let next = r - fr / slope;
        let fnext = f(next);
        if !(fnext.abs() < fr.abs()) {
            break;
        }
        r = next;
        fr = fnext;
    }
    r
}

/// Hyperbolic fixed points of `D` in `[lo, hi]` with their multipliers.
pub fn find_fixed_points(d: &PropagationMap, lo: f64, hi: f64, tol: f64) -> Vec<FixedPoint> {
    scan_fixed_points(d.map(), lo, hi, tol).fixed_points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    /// `D(z) < z` on the interior.
    Below,
    /// `D(z) > z` on the interior.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum End {
    Lo,
    Hi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Iterate `D`.
    Forward,
    /// Iterate `D⁻¹`.
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subinterval {
    pub lo: f64,
    pub hi: f64,
    pub sign: Sign,
    /// Endpoint the splinters of this piece converge to.
    pub attractor_end: End,
    /// How the splinters are generated.
    pub direction: Direction,
    /// `D'` at the attractor (greater than 1 for backward pieces).
    pub multiplier_at_attractor: f64,
    /// `D'` at each endpoint that is a fixed point.
    pub lo_multiplier: Option<f64>,
    pub hi_multiplier: Option<f64>,
    /// First interior sample whose sign disagrees with `sign`, if any.
    pub sign_violation: Option<f64>,
}

impl Subinterval {
    pub fn attractor(&self) -> f64 {
        self.end(self.attractor_end)
    }

    pub fn end(&self, e: End) -> f64 {
        match e {
            End::Lo => self.lo,
            End::Hi => self.hi,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Multiplier of the map actually iterated (`D` or `D⁻¹`); in (0, 1)
    /// for a well-formed piece.
    pub fn iteration_multiplier(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.multiplier_at_attractor,
            Direction::Backward => 1.0 / self.multiplier_at_attractor,
        }
    }

    pub fn contains_open(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// End approached by forward iteration.
    pub fn forward_end(&self) -> End {
        match self.sign {
            Sign::Below => End::Lo,
            Sign::Above => End::Hi,
        }
    }

    pub fn backward_end(&self) -> End {
        match self.forward_end() {
            End::Lo => End::Hi,
            End::Hi => End::Lo,
        }
    }

    pub fn multiplier_at(&self, e: End) -> Option<f64> {
        match e {
            End::Lo => self.lo_multiplier,
            End::Hi => self.hi_multiplier,
        }
    }

    /// The same piece iterated in the given direction, if that direction
    /// converges to a fixed endpoint.
    pub fn oriented(&self, direction: Direction) -> Option<Subinterval> {
        let end = match direction {
            Direction::Forward => self.forward_end(),
            Direction::Backward => self.backward_end(),
        };
        let m = self.multiplier_at(end).filter(|m| m.is_finite() && *m > 0.0)?;
        Some(Subinterval { attractor_end: end, direction, multiplier_at_attractor: m, ..self.clone() })
    }
}

/// Split `[lo, hi]` at the fixed points of `D` into pieces on which
/// `D(z) - z` has one sign, and orient each toward a fixed endpoint.
pub fn subdivide(d: &PropagationMap, lo: f64, hi: f64) -> Result<Vec<Subinterval>> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
    }
    let mut lo_m = None;
    let mut hi_m = None;
    let (mut lo, mut hi) = (lo, hi);
    let mut cuts: Vec<(f64, f64)> = Vec::new();
    for fp in d.fixed_points() {
        let z = fp.location;
        if (z - lo).abs() <= fp_tolerance(z) {
            lo = z;
            lo_m = Some(fp.multiplier);
        } else if (z - hi).abs() <= fp_tolerance(z) {
            hi = z;
            hi_m = Some(fp.multiplier);
        } else if z > lo && z < hi {
            cuts.push((z, fp.multiplier));
        }
    }
    let mut bounds = vec![(lo, lo_m)];
    bounds.extend(cuts.iter().map(|&(z, m)| (z, Some(m))));
    bounds.push((hi, hi_m));
    let (dom_lo, dom_hi) = d.domain();
    let mut pieces = Vec::with_capacity(bounds.len() - 1);
    for w in bounds.windows(2) {
        let ((a, ma), (b, mb)) = (w[0], w[1]);
        let samples: Vec<(f64, f64)> = (0..SIGN_SAMPLES)
            .map(|k| a + (b - a) * (k as f64 + 0.5) / SIGN_SAMPLES as f64)
            .filter(|&z| z >= dom_lo && z <= dom_hi)
            .map(|z| (z, d.eval(z) - z))
            .collect();
        let below = samples.iter().filter(|s| s.1 < 0.0).count();
        let above = samples.iter().filter(|s| s.1 > 0.0).count();
        if below + above == 0 {
            return Err(Error::Precondition(format!("D coincides with the identity on [{a}, {b}]")));
        }
        let sign = if below >= above { Sign::Below } else { Sign::Above };
        let sign_violation = samples
            .iter()
            .find(|s| match sign {
                Sign::Below => s.1 >= 0.0,
                Sign::Above => s.1 <= 0.0,
            })
            .map(|s| s.0);
        let raw = Subinterval {
            lo: a,
            hi: b,
            sign,
            attractor_end: End::Lo,
            direction: Direction::Forward,
            multiplier_at_attractor: f64::NAN,
            lo_multiplier: ma,
            hi_multiplier: mb,
            sign_violation,
        };
        let piece = raw
            .oriented(Direction::Forward)
            .or_else(|| raw.oriented(Direction::Backward))
            .ok_or(Error::NoFixedPointInClosure { lo: a, hi: b })?;
        pieces.push(piece);
    }
    Ok(pieces)
}

/// Relative margin between grid points and fixed endpoints.
pub const FIXED_POINT_MARGIN: f64 = 0.005;
/// Relative margin around points where `D` is not differentiable.
pub const SINGULAR_MARGIN: f64 = 0.01;

/// `n` uniform points on `sub`, kept `FIXED_POINT_MARGIN` of the width away
/// from fixed endpoints and `SINGULAR_MARGIN` away from singular points
/// (the given ones and fixed endpoints with a non-finite multiplier).
pub fn piece_grid(sub: &Subinterval, n: usize, singular: &[f64]) -> Vec<f64> {
    let w = sub.width();
    let mut lo = sub.lo;
    let mut hi = sub.hi;
    let near = |s: f64, e: f64| (s - e).abs() <= SINGULAR_MARGIN * w;
    match sub.lo_multiplier {
        Some(m) if !m.is_finite() => lo = sub.lo + SINGULAR_MARGIN * w,
        Some(_) => lo = sub.lo + FIXED_POINT_MARGIN * w,
        None => {}
    }
    match sub.hi_multiplier {
        Some(m) if !m.is_finite() => hi = sub.hi - SINGULAR_MARGIN * w,
        Some(_) => hi = sub.hi - FIXED_POINT_MARGIN * w,
        None => {}
    }
    for &s in singular {
        if near(s, sub.lo) {
            lo = lo.max(s + SINGULAR_MARGIN * w);
        }
        if near(s, sub.hi) {
            hi = hi.min(s - SINGULAR_MARGIN * w);
        }
    }
    linspace(lo, hi, n)
}

/// One step of the splinter map: `D(x)` forward, `D⁻¹(x)` backward.
pub(crate) fn step(d: &PropagationMap, sub: &Subinterval, x: f64) -> Result<f64> {
    match sub.direction {
        Direction::Forward => Ok(d.eval(x)),
        Direction::Backward => {
            // D(p) = p and D(x) is past x, so D - x changes sign between them
            let p = sub.attractor();
            let (a, b) = if p < x { (p, x) } else { (x, p) };
            invert_on(|z| d.eval(z), x, a, b, 1e-15 * (1.0 + x.abs()))
        }
    }
}

/// Derivative of the splinter map at `x`, given `fx = step(x)`.
pub(crate) fn step_derivative(d: &PropagationMap, sub: &Subinterval, x: f64, fx: f64) -> f64 {
    match sub.direction {
        Direction::Forward => d.derivative(x),
        Direction::Backward => 1.0 / d.derivative(fx),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splinter {
    pub points: Vec<f64>,
    pub direction: Direction,
    pub limit: f64,
    /// False when `n_max` steps were taken without reaching `tol`.
    pub converged: bool,
}

/// The orbit of `x0` toward the attractor of `sub`.
pub fn splinter(d: &PropagationMap, sub: &Subinterval, x0: f64, tol: f64, n_max: usize) -> Result<Splinter> {
    if !sub.contains_open(x0) {
        return Err(Error::Precondition(format!(
            "x0 = {x0} is not inside the open subinterval ({}, {})",
            sub.lo, sub.hi
        )));
    }
    let limit = sub.attractor();
    let mut points = vec![x0];
    let mut x = x0;
    for n in 1..=n_max {
        let next = step(d, sub, x)?;
        // strictly closer to the limit, from the same side
        if !((next - limit) * (x - limit) >= 0.0 && (next - limit).abs() < (x - limit).abs()) {
            return Err(Error::NonMonotoneSequence { step: n });
        }
        points.push(next);
        x = next;
        if (x - limit).abs() <= tol {
            return Ok(Splinter { points, direction: sub.direction, limit, converged: true });
        }
    }
    Ok(Splinter { points, direction: sub.direction, limit, converged: false })
}
