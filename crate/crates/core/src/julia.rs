//! Julia's equation `g(D(x)) = D'(x) g(x)` with `g'(p) = 1`: the infinite
//! product, the fixed-point iteration, least squares on a constrained
//! polynomial, gluing across subintervals, and the field `v = log(λ)·g`.
//!
//! On a piece iterated by `F = D⁻¹` the equation is solved for `F`; its
//! solutions coincide with those for `D`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsReport;
use crate::domain::{fp_tolerance, piece_grid, step, step_derivative, subdivide, Direction, End, Subinterval};
use crate::error::{Error, Result};
use crate::interp::{GridFunction, Interpolant, InterpolationRule};
use crate::lsq::gauss_newton;
use crate::numeric::sup_norm;
use crate::propagation::{ParametricForm, PropagationMap};
use crate::schroeder::{advance, geometric_tail, noise_floor};

pub const DEFAULT_EPS: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_GRID: usize = 200;

/// `ρ(x) = (F(x) - p) / (F'(x)(x - p))` for the map iterated on `sub`,
/// together with `F(x)`.
fn rho(d: &PropagationMap, sub: &Subinterval, x: f64) -> Result<(f64, f64)> {
    let p = sub.attractor();
    let fx = step(d, sub, x)?;
    let slope = step_derivative(d, sub, x, fx);
    Ok(((fx - p) / (slope * (x - p)), fx))
}

/// `g(x0) = (x0 - p) ∏ ρ(F^n(x0))`, stopping when the relative change of
/// the partial product drops to `eps` or the orbit is close enough to `p`
/// that the rest is summed as a geometric tail.
pub fn julia_infinite_product(d: &PropagationMap, sub: &Subinterval, x0: f64, eps: f64, n_max: usize) -> Result<f64> {
    if x0 < sub.lo || x0 > sub.hi {
        return Err(Error::Precondition(format!("x0 = {x0} lies outside [{}, {}]", sub.lo, sub.hi)));
    }
    let p = sub.attractor();
    if x0 == p {
        return Ok(0.0);
    }
    let floor = noise_floor(sub);
    let lambda = sub.iteration_multiplier();
    let mut q = 1.0;
    let mut x = x0;
    for n in 1..=n_max {
        let (r, _) = rho(d, sub, x)?;
        let next = advance(d, sub, x0, x, n)?;
        let q_new = q * r;
        if !q_new.is_finite() {
            return Err(Error::UndefinedSplinter { x0, step: n });
        }
        let change = (q_new - q).abs() / q.abs();
        q = q_new;
        x = next;
        if change <= eps || x == p {
            return Ok((x0 - p) * q);
        }
        if (x - p).abs() <= floor {
            return Ok((x0 - p) * q * (1.0 + geometric_tail(r - 1.0, lambda)));
        }
    }
    Err(Error::MaxIterExceeded { what: "infinite product", cap: n_max })
}

/// The fixed-point iteration `ĝ ← ρ·Ĝ∘F` on `nodes` inside one piece,
/// with `Ĝ` interpolating the nodes and `ĝ(p) = 1`. Returns
/// `g = (x - p)ĝ`.
pub fn julia_fixed_point_on(
    d: &PropagationMap,
    sub: &Subinterval,
    nodes: &[f64],
    eps: f64,
    n_max: usize,
    rule: InterpolationRule,
) -> Result<GridFunction> {
    let p = sub.attractor();
    let nodes: Vec<f64> = nodes.iter().copied().filter(|&x| x != p).collect();
    if nodes.is_empty() {
        return Err(Error::Precondition("no grid points besides the fixed point".into()));
    }
    let mut q = Vec::with_capacity(nodes.len());
    let mut y = Vec::with_capacity(nodes.len());
    for &x in &nodes {
        let (r, fx) = rho(d, sub, x)?;
        if !r.is_finite() {
            return Err(Error::UndefinedSplinter { x0: x, step: 1 });
        }
        q.push(r);
        y.push(fx);
    }

    let mut xs = nodes.clone();
    xs.push(p);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let sorted_xs: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let (lo, hi) = (sorted_xs[0], sorted_xs[sorted_xs.len() - 1]);
    if let Some(&bad) = y.iter().find(|&&v| v < lo || v > hi) {
        return Err(Error::InterpolationOutOfHull { x: bad, lo, hi });
    }

    let n = nodes.len();
    let mut ghat = vec![1.0; n];
    for _ in 0..n_max {
        let mut vals: Vec<f64> = ghat.clone();
        vals.push(1.0);
        let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        let interp = Interpolant::new(rule, sorted_xs.clone(), sorted_vals)?;
        let next: Vec<f64> = (0..n).map(|j| q[j] * interp.eval(y[j])).collect();
        let delta = sup_norm(next.iter().zip(&ghat).map(|(a, b)| a - b));
        let scale = sup_norm(next.iter().copied());
        ghat = next;
        if delta <= eps * scale {
            let mut pairs: Vec<(f64, f64)> = nodes.iter().zip(&ghat).map(|(&x, &gh)| (x, (x - p) * gh)).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (grid, values): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            return GridFunction::with_linear_factor(grid, values, rule, p, 1.0);
        }
    }
    Err(Error::MaxIterExceeded { what: "Julia fixed-point iteration", cap: n_max })
}

/// `max |g(D(x)) - D'(x)g(x)|` over the grid points of `g` whose image lies
/// in the hull of `g`.
pub fn julia_residual(d: &PropagationMap, g: &GridFunction) -> f64 {
    g.grid()
        .iter()
        .zip(g.values())
        .filter_map(|(&x, &gx)| {
            let y = d.eval(x);
            g.in_hull(y).then(|| (g.eval(y) - d.derivative(x) * gx).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct FieldEstimate {
    pub v: GridFunction,
    pub lambda: f64,
    pub g: GridFunction,
    pub parametric_form: Option<ParametricForm>,
    pub diagnostics: DiagnosticsReport,
}

/// `v = log(λ)·g`.
pub fn assemble_field(g: GridFunction, lambda: f64) -> Result<FieldEstimate> {
    if !(lambda > 0.0 && lambda.is_finite()) || lambda == 1.0 {
        return Err(Error::InvalidMultiplier(lambda));
    }
    Ok(FieldEstimate {
        v: g.scaled(lambda.ln())?,
        lambda,
        g,
        parametric_form: None,
        diagnostics: DiagnosticsReport::default(),
    })
}

/// `julia_infinite_product` at every node of one piece, tabulated as
/// `(x - p)·q(x)` with `q(p) = 1`.
pub fn julia_product_on(
    d: &PropagationMap,
    sub: &Subinterval,
    nodes: &[f64],
    eps: f64,
    n_max: usize,
    rule: InterpolationRule,
) -> Result<GridFunction> {
    let p = sub.attractor();
    let grid: Vec<f64> = nodes.iter().copied().filter(|&x| x != p).collect();
    let values = grid.iter().map(|&x| julia_infinite_product(d, sub, x, eps, n_max)).collect::<Result<Vec<_>>>()?;
    GridFunction::with_linear_factor(grid, values, rule, p, 1.0)
}

/// Pieces of `D` covering `grid`: the hull of the grid widened to the
/// nearest fixed points outside it, split at the fixed points inside.
pub fn pieces_for(d: &PropagationMap, grid: &[f64]) -> Result<Vec<Subinterval>> {
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(Error::Precondition("grid needs at least two distinct points".into()));
    }
    let fps = d.fixed_points().iter().map(|f| f.location);
    let below = fps.clone().filter(|&z| z <= lo).fold(f64::NEG_INFINITY, f64::max);
    let above = fps.filter(|&z| z >= hi).fold(f64::INFINITY, f64::min);
    subdivide(d, if below.is_finite() { below } else { lo }, if above.is_finite() { above } else { hi })
}

/// The grid points belonging to `sub`: strictly inside it and off its
/// fixed endpoints.
fn nodes_in(sub: &Subinterval, grid: &[f64]) -> Vec<f64> {
    let off = |x: f64, e: f64, m: Option<f64>| m.is_none() || (x - e).abs() > fp_tolerance(e);
    grid.iter()
        .copied()
        .filter(|&x| x >= sub.lo && x <= sub.hi)
        .filter(|&x| off(x, sub.lo, sub.lo_multiplier) && off(x, sub.hi, sub.hi_multiplier))
        .collect()
}

/// A glued solution together with the per-piece solutions it came from and
/// the factors they were scaled by.
#[derive(Debug, Clone)]
pub struct PiecewiseSolution {
    pub g: GridFunction,
    pub parts: Vec<(Subinterval, GridFunction)>,
    pub scales: Vec<f64>,
}

/// Solve on each piece of `D` covering `grid` and glue.
pub fn solve_by_pieces(
    d: &PropagationMap,
    grid: &[f64],
    solve: impl Fn(&Subinterval, &[f64]) -> Result<GridFunction>,
) -> Result<PiecewiseSolution> {
    let mut parts = Vec::new();
    for sub in pieces_for(d, grid)? {
        let nodes = nodes_in(&sub, grid);
        if nodes.is_empty() {
            return Err(Error::Precondition(format!("no grid points inside ({}, {})", sub.lo, sub.hi)));
        }
        let g = solve(&sub, &nodes)?;
        parts.push((sub, g));
    }
    let (g, scales) = glue_with_scales(d, &mut parts)?;
    Ok(PiecewiseSolution { g, parts, scales })
}

/// The fixed-point iteration on an arbitrary grid, splitting it at the
/// fixed points of `D` and gluing the pieces.
pub fn julia_fixed_point(
    d: &PropagationMap,
    grid: &[f64],
    eps: f64,
    n_max: usize,
    rule: InterpolationRule,
) -> Result<GridFunction> {
    Ok(solve_by_pieces(d, grid, |sub, nodes| julia_fixed_point_on(d, sub, nodes, eps, n_max, rule))?.g)
}

/// The infinite product at every grid point, split and glued like
/// [`julia_fixed_point`].
pub fn julia_product(
    d: &PropagationMap,
    grid: &[f64],
    eps: f64,
    n_max: usize,
    rule: InterpolationRule,
) -> Result<GridFunction> {
    Ok(solve_by_pieces(d, grid, |sub, nodes| julia_product_on(d, sub, nodes, eps, n_max, rule))?.g)
}

/// Default grid of `n` points per piece, kept off fixed endpoints and the
/// given singular points.
pub fn default_grid(d: &PropagationMap, lo: f64, hi: f64, n: usize, singular: &[f64]) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    for sub in subdivide(d, lo, hi)? {
        grid.extend(piece_grid(&sub, n, singular));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// `g'(c)` for the piece solution `g`, where `c` is an end of `sub`:
/// `g(x0) / g_c(x0)` with `g_c` the product solution normalized at `c`.
fn slope_at_end(d: &PropagationMap, sub: &Subinterval, g: &GridFunction, end: End) -> Result<f64> {
    if end == sub.attractor_end {
        return Ok(1.0);
    }
    let c = sub.end(end);
    let direction = if end == sub.forward_end() { Direction::Forward } else { Direction::Backward };
    let toward_c = sub.oriented(direction).ok_or(Error::NonFiniteRatio { x: c })?;
    let x0 = 0.5 * (sub.lo + sub.hi);
    let gc = julia_infinite_product(d, &toward_c, x0, DEFAULT_EPS, DEFAULT_MAX_ITER)?;
    let ratio = g.eval(x0) / gc;
    if !ratio.is_finite() || ratio == 0.0 {
        return Err(Error::NonFiniteRatio { x: c });
    }
    Ok(ratio)
}

/// Rescale piecewise solutions (each with unit slope at its own
/// attractor) so that the combined `g` has matching slopes at shared
/// fixed points and unit slope at the base fixed point of `D`.
pub fn glue_subintervals(d: &PropagationMap, mut parts: Vec<(Subinterval, GridFunction)>) -> Result<GridFunction> {
    Ok(glue_with_scales(d, &mut parts)?.0)
}

/// [`glue_subintervals`], also returning the factor applied to each part
/// (in the order of `parts` after sorting them by position).
pub fn glue_with_scales(d: &PropagationMap, parts: &mut [(Subinterval, GridFunction)]) -> Result<(GridFunction, Vec<f64>)> {
    match parts.len() {
        0 => return Err(Error::Precondition("nothing to glue".into())),
        1 => return Ok((parts[0].1.clone(), vec![1.0])),
        _ => {}
    }
    parts.sort_by(|a, b| a.0.lo.total_cmp(&b.0.lo));
    for w in parts.windows(2) {
        let (a, b) = (&w[0].0, &w[1].0);
        if (a.hi - b.lo).abs() > fp_tolerance(a.hi) || a.hi_multiplier.is_none() {
            return Err(Error::MismatchedEndpoints(format!(
                "({}, {}) and ({}, {}) do not share a fixed point",
                a.lo, a.hi, b.lo, b.hi
            )));
        }
    }

    let base_fp = d.base_fixed_point();
    let base = parts.iter().position(|(s, _)| (s.attractor() - base_fp).abs() <= fp_tolerance(base_fp)).unwrap_or(0);
    let mut scale = vec![1.0; parts.len()];
    for i in base..parts.len() - 1 {
        let (a, ga) = &parts[i];
        let (b, gb) = &parts[i + 1];
        scale[i + 1] = scale[i] * slope_at_end(d, a, ga, End::Hi)? / slope_at_end(d, b, gb, End::Lo)?;
    }
    for i in (1..=base).rev() {
        let (a, ga) = &parts[i - 1];
        let (b, gb) = &parts[i];
        scale[i - 1] = scale[i] * slope_at_end(d, b, gb, End::Lo)? / slope_at_end(d, a, ga, End::Hi)?;
    }

    let mut nodes: Vec<(f64, f64)> = Vec::new();
    for ((sub, g), s) in parts.iter().zip(&scale) {
        nodes.extend(g.grid().iter().zip(g.values()).map(|(&x, &v)| (x, s * v)));
        for (e, m) in [(sub.lo, sub.lo_multiplier), (sub.hi, sub.hi_multiplier)] {
            if m.is_some_and(f64::is_finite) {
                nodes.push((e, 0.0));
            }
        }
    }
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes.dedup_by(|a, b| (a.0 - b.0).abs() <= fp_tolerance(b.0));
    let (grid, values) = nodes.into_iter().unzip();
    Ok((GridFunction::new(grid, values, parts[0].1.rule())?, scale))
}

/// `max |g(F(x)) - F'(x)g(x)|` over the nodes of a piece solution, with `F`
/// the map iterated on `sub`. With `pointwise = Some((eps, n_max))`,
/// `g(F(x))` comes from the infinite product instead of the interpolant.
pub fn piece_residual(
    d: &PropagationMap,
    sub: &Subinterval,
    g: &GridFunction,
    pointwise: Option<(f64, usize)>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (&x, &gx) in g.grid().iter().zip(g.values()) {
        let y = step(d, sub, x)?;
        let slope = step_derivative(d, sub, x, y);
        let gy = match pointwise {
            Some((eps, n_max)) => julia_infinite_product(d, sub, y, eps, n_max)?,
            None => g.eval(y),
        };
        worst = worst.max((gy - slope * gx).abs());
    }
    Ok(worst)
}

/// `v(x) = slope·(x - origin) + Σ_{k=2}^{degree} p_k (x - origin)^k`, so that
/// `v(origin) = 0` and `v'(origin) = slope` hold for every `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedPolynomial {
    pub degree: usize,
    pub origin: f64,
    pub slope: f64,
}

impl ConstrainedPolynomial {
    pub fn arity(&self) -> usize {
        self.degree.saturating_sub(1)
    }

    pub fn eval(&self, params: &[f64], x: f64) -> f64 {
        let u = x - self.origin;
        let mut acc = 0.0;
        for &c in params.iter().rev() {
            acc = (acc + c) * u;
        }
        self.slope * u + acc * u
    }

    pub fn describe(&self, params: &[f64]) -> String {
        let u = if self.origin == 0.0 { "x".to_string() } else { format!("(x - {})", self.origin) };
        let mut s = format!("{} {u}", self.slope);
        for (k, c) in params.iter().enumerate() {
            s += &format!(" + {c} {u}^{}", k + 2);
        }
        s
    }
}

/// The constrained polynomial of the given degree at the base fixed point
/// of `D`, with slope `log D'(p)`.
pub fn constrained_polynomial(d: &PropagationMap, degree: usize) -> ConstrainedPolynomial {
    ConstrainedPolynomial { degree, origin: d.base_fixed_point(), slope: d.lambda().ln() }
}

/// Minimize `Σ_j (v_p(D(x_j)) - D'(x_j) v_p(x_j))²` over the free
/// coefficients of `model`.
pub fn julia_least_squares(
    d: &PropagationMap,
    collocation: &[f64],
    model: &ConstrainedPolynomial,
) -> Result<FieldEstimate> {
    if model.degree < 2 {
        return Err(Error::ConstraintViolation(format!(
            "degree {} leaves no free coefficients besides the constrained ones",
            model.degree
        )));
    }
    if collocation.len() < model.arity() {
        return Err(Error::Precondition(format!(
            "{} collocation points for {} coefficients",
            collocation.len(),
            model.arity()
        )));
    }
    let o = model.origin;
    let rows: Vec<(f64, f64, f64, f64)> =
        collocation.iter().map(|&x| (x, d.eval(x), d.derivative(x), x - o)).collect();
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        Some(rows.iter().map(|&(x, y, dp, _)| model.eval(p, y) - dp * model.eval(p, x)).collect())
    };
    let jacobian = |_: &[f64]| {
        nalgebra::DMatrix::from_fn(rows.len(), model.arity(), |j, k| {
            let (_, y, dp, u) = rows[j];
            (y - o).powi(k as i32 + 2) - dp * u.powi(k as i32 + 2)
        })
    };
    let fit = gauss_newton(residuals, Some(jacobian), &vec![0.0; model.arity()])?;
    let at_origin = model.eval(&fit.params, o);
    if at_origin.abs() > 1e-12 {
        return Err(Error::ConstraintViolation(format!("fitted v(origin) = {at_origin}")));
    }

    let mut grid = collocation.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let v_values: Vec<f64> = grid.iter().map(|&x| model.eval(&fit.params, x)).collect();
    let lambda = model.slope.exp();
    let g_values = v_values.iter().map(|v| v / model.slope).collect();
    let rule = InterpolationRule::BarycentricRational;
    let mut est = FieldEstimate {
        v: GridFunction::new(grid.clone(), v_values, rule)?,
        lambda,
        g: GridFunction::new(grid, g_values, rule)?,
        parametric_form: Some(ParametricForm { description: model.describe(&fit.params), params: fit.params }),
        diagnostics: DiagnosticsReport::default(),
    };
    est.diagnostics.julia_residual = fit.residual_norm;
    Ok(est)
}
