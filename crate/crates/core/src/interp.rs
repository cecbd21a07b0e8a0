//! One-dimensional interpolation on tabulated data and the [`GridFunction`]
//! used to carry tabulated solutions (`g`, `ĝ`, `h`) between stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blending degree of the Floater–Hormann barycentric rational interpolant.
pub const FLOATER_HORMANN_DEGREE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolationRule {
    Linear,
    /// Piecewise cubic Hermite with monotonicity-limited slopes, or with
    /// caller-supplied slopes when those are known.
    MonotoneCubic,
    /// Floater–Hormann barycentric rational interpolation (pole free on the
    /// real line).
    BarycentricRational,
}

impl std::str::FromStr for InterpolationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(InterpolationRule::Linear),
            "monotone-cubic" | "cubic" => Ok(InterpolationRule::MonotoneCubic),
            "barycentric-rational" | "rational" => Ok(InterpolationRule::BarycentricRational),
            other => Err(Error::InvalidParameter(format!("unknown interpolation rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Linear,
    Hermite(Vec<f64>),
    Barycentric(Vec<f64>),
}

/// An interpolant through strictly increasing abscissas.
#[derive(Debug, Clone)]
pub struct Interpolant {
    xs: Vec<f64>,
    ys: Vec<f64>,
    kind: Kind,
}

impl Interpolant {
    pub fn new(rule: InterpolationRule, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_nodes(&xs, &ys)?;
        let kind = match rule {
            InterpolationRule::Linear => Kind::Linear,
            InterpolationRule::MonotoneCubic => Kind::Hermite(monotone_slopes(&xs, &ys)),
            InterpolationRule::BarycentricRational => {
                Kind::Barycentric(floater_hormann_weights(&xs, FLOATER_HORMANN_DEGREE))
            }
        };
        Ok(Interpolant { xs, ys, kind })
    }

    /// Cubic Hermite interpolant with known nodal slopes.
    pub fn hermite(xs: Vec<f64>, ys: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        check_nodes(&xs, &ys)?;
        if slopes.len() != xs.len() {
            return Err(Error::Precondition("one slope per node required".into()));
        }
        Ok(Interpolant { xs, ys, kind: Kind::Hermite(slopes) })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn hull(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Linear => {
                let i = self.segment(x);
                let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
                self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
            }
            Kind::Hermite(m) => {
                let i = self.segment(x);
                let h = self.xs[i + 1] - self.xs[i];
                let t = (x - self.xs[i]) / h;
                let (t2, t3) = (t * t, t * t * t);
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                h00 * self.ys[i] + h10 * h * m[i] + h01 * self.ys[i + 1] + h11 * h * m[i + 1]
            }
            Kind::Barycentric(w) => barycentric_eval(&self.xs, &self.ys, w, x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Linear => {
                let i = self.segment(x);
                (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
            }
            Kind::Hermite(m) => {
                let i = self.segment(x);
                let h = self.xs[i + 1] - self.xs[i];
                let t = (x - self.xs[i]) / h;
                let t2 = t * t;
                let d00 = 6.0 * t2 - 6.0 * t;
                let d10 = 3.0 * t2 - 4.0 * t + 1.0;
                let d01 = -6.0 * t2 + 6.0 * t;
                let d11 = 3.0 * t2 - 2.0 * t;
                (d00 * self.ys[i] + d01 * self.ys[i + 1]) / h + d10 * m[i] + d11 * m[i + 1]
            }
            Kind::Barycentric(w) => barycentric_derivative(&self.xs, &self.ys, w, x),
        }
    }

    /// Index of the segment `[x_i, x_{i+1}]` used for `x` (end segments
    /// extend outward).
    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&xi| xi <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }
}

fn check_nodes(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition(format!("{} abscissas but {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Precondition("interpolation needs at least two nodes".into()));
    }
    if let Some(i) = xs.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition(format!("abscissas not strictly increasing at index {}", i + 1)));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("non-finite interpolation data".into()));
    }
    Ok(())
}

/// Nodal slopes for a shape-preserving cubic: three-point parabolic
/// estimates limited so that each cubic piece stays monotone where the data
/// are (Fritsch–Carlson/Hyman bound `|m| <= 3 min |secant|`).
pub(crate) fn monotone_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        let (d0, d1) = (delta[k - 1], delta[k]);
        if d0 * d1 <= 0.0 {
            m[k] = 0.0;
            continue;
        }
        let est = (h[k] * d0 + h[k - 1] * d1) / (h[k - 1] + h[k]);
        let bound = 3.0 * d0.abs().min(d1.abs());
        m[k] = if est.abs() > bound { bound.copysign(est) } else { est };
    }
    m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let est = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if est * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && est.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        est
    }
}

/// Floater–Hormann weights of blending degree `d` (clamped to `n - 1`).
pub(crate) fn floater_hormann_weights(xs: &[f64], d: usize) -> Vec<f64> {
    let n = xs.len();
    let d = d.min(n - 1);
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(d);
            let hi = k.min(n - 1 - d);
            (lo..=hi)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let prod: f64 = (i..=i + d)
                        .filter(|&j| j != k)
                        .map(|j| 1.0 / (xs[k] - xs[j]))
                        .product();
                    sign * prod
                })
                .sum()
        })
        .collect()
}

pub(crate) fn barycentric_eval(xs: &[f64], ys: &[f64], w: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&xk, &yk), &wk) in xs.iter().zip(ys).zip(w) {
        let diff = x - xk;
        if diff == 0.0 {
            return yk;
        }
        let c = wk / diff;
        num += c * yk;
        den += c;
    }
    num / den
}

pub(crate) fn barycentric_derivative(xs: &[f64], ys: &[f64], w: &[f64], x: f64) -> f64 {
    if let Some(j) = xs.iter().position(|&xk| xk == x) {
        let rj = ys[j];
        let s: f64 = (0..xs.len())
            .filter(|&k| k != j)
            .map(|k| w[k] * (rj - ys[k]) / (x - xs[k]))
            .sum();
        return -s / w[j];
    }
    let r = barycentric_eval(xs, ys, w, x);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&xk, &yk), &wk) in xs.iter().zip(ys).zip(w) {
        let diff = x - xk;
        num += wk * (r - yk) / (diff * diff);
        den += wk / diff;
    }
    num / den
}

/// A tabulated function: values on a strictly increasing grid plus the rule
/// used to evaluate between (and, flagged, beyond) the nodes.
///
/// A grid function may carry a linear factor `(x - origin)`: it then
/// interpolates `values / (x - origin)` with the extra node
/// `(origin, slope)` and multiplies back. This is how solutions normalized
/// at a fixed point (`g = (x - fp)·ĝ`, `ĝ(fp) = g'(fp)`) are represented.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
    rule: InterpolationRule,
    origin: Option<f64>,
    interp: Interpolant,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, rule: InterpolationRule) -> Result<Self> {
        let interp = Interpolant::new(rule, grid.clone(), values.clone())?;
        Ok(GridFunction { grid, values, rule, origin: None, interp })
    }

    /// Monotone-cubic grid function with known derivatives at the nodes.
    pub fn with_slopes(grid: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let interp = Interpolant::hermite(grid.clone(), values.clone(), slopes)?;
        Ok(GridFunction { grid, values, rule: InterpolationRule::MonotoneCubic, origin: None, interp })
    }

    /// Grid function `g(x) = (x - origin)·q(x)` where `q` interpolates
    /// `values / (x - origin)` together with `q(origin) = slope`.
    pub fn with_linear_factor(
        grid: Vec<f64>,
        values: Vec<f64>,
        rule: InterpolationRule,
        origin: f64,
        slope: f64,
    ) -> Result<Self> {
        check_nodes(&grid, &values)?;
        let mut nodes: Vec<(f64, f64)> = grid
            .iter()
            .zip(&values)
            .filter(|(&x, _)| x != origin)
            .map(|(&x, &v)| (x, v / (x - origin)))
            .collect();
        nodes.push((origin, slope));
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (xs, qs): (Vec<f64>, Vec<f64>) = nodes.into_iter().unzip();
        let interp = Interpolant::new(rule, xs, qs)?;
        Ok(GridFunction { grid, values, rule, origin: Some(origin), interp })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rule(&self) -> InterpolationRule {
        self.rule
    }

    pub fn origin(&self) -> Option<f64> {
        self.origin
    }

    /// Interval on which evaluation is interpolation rather than
    /// extrapolation.
    pub fn hull(&self) -> (f64, f64) {
        self.interp.hull()
    }

    pub fn in_hull(&self, x: f64) -> bool {
        let (lo, hi) = self.hull();
        x >= lo && x <= hi
    }

    /// Evaluate, extrapolating outside the hull.
    pub fn eval(&self, x: f64) -> f64 {
        match self.origin {
            Some(o) => (x - o) * self.interp.eval(x),
            None => self.interp.eval(x),
        }
    }

    /// Evaluate, refusing to extrapolate.
    pub fn eval_in_hull(&self, x: f64) -> Result<f64> {
        if !self.in_hull(x) {
            let (lo, hi) = self.hull();
            return Err(Error::InterpolationOutOfHull { x, lo, hi });
        }
        Ok(self.eval(x))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.origin {
            Some(o) => self.interp.eval(x) + (x - o) * self.interp.derivative(x),
            None => self.interp.derivative(x),
        }
    }

    /// Same grid, every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|v| v * c).collect();
        match self.origin {
            Some(o) => {
                let slope = self.interp.eval(o) * c;
                GridFunction::with_linear_factor(self.grid.clone(), values, self.rule, o, slope)
            }
            None => match &self.interp.kind {
                Kind::Hermite(m) if self.rule == InterpolationRule::MonotoneCubic => {
                    let slopes = m.iter().map(|s| s * c).collect();
                    GridFunction::with_slopes(self.grid.clone(), values, slopes)
                }
                _ => GridFunction::new(self.grid.clone(), values, self.rule),
            },
        }
    }
}
