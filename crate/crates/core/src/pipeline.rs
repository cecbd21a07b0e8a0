//! The whole chain: pairs → `D` → `g` → `v`, with diagnostics.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{fp_tolerance, subdivide, Subinterval};
use crate::error::{Error, Result};
use crate::interp::{GridFunction, InterpolationRule};
use crate::julia::{
    assemble_field, constrained_polynomial, default_grid, julia_fixed_point_on, julia_least_squares, julia_product_on,
    julia_residual, piece_residual, solve_by_pieces, ConstrainedPolynomial, FieldEstimate, DEFAULT_EPS,
    DEFAULT_GRID, DEFAULT_MAX_ITER,
};
use crate::propagation::{fit_monotone_spline, fit_parametric, ParametricForm, ParametricModel, PropagationMap};
use crate::rational::{fit_rational_barycentric, fit_rational_least_squares};
use crate::schroeder::{self, ConjugationSolution};
use crate::trajectory::PairSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// Infinite product at every grid point.
    #[default]
    Product,
    /// Fixed-point iteration on the interpolated grid function.
    FixedPoint,
    /// Least squares over a constrained polynomial.
    LeastSquares,
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Solver::Product),
            "fixed-point" => Ok(Solver::FixedPoint),
            "least-squares" => Ok(Solver::LeastSquares),
            other => Err(Error::InvalidParameter(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fitter {
    Parametric,
    #[default]
    Rational,
    Spline,
}

impl FromStr for Fitter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(Fitter::Parametric),
            "rational" => Ok(Fitter::Rational),
            "spline" => Ok(Fitter::Spline),
            other => Err(Error::InvalidParameter(format!("unknown fitter '{other}'"))),
        }
    }
}

#[derive(Clone)]
pub struct FitOptions {
    pub fitter: Fitter,
    /// Required by the parametric fitter, with its initial parameters.
    pub model: Option<(ParametricModel, Vec<f64>)>,
    /// Greedy rational fit: stop at this max residual ...
    pub rational_tol: f64,
    /// ... or this many support points.
    pub max_support: usize,
    /// When set, fit a rational function with this many support points by
    /// least squares instead (suited to noisy data).
    pub least_squares_support: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { fitter: Fitter::Rational, model: None, rational_tol: 1e-13, max_support: 40, least_squares_support: None }
    }
}

pub fn fit_map(pairs: &PairSet, opts: &FitOptions) -> Result<PropagationMap> {
    match opts.fitter {
        Fitter::Parametric => {
            let (model, init) = opts
                .model
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("the parametric fitter needs a model".into()))?;
            fit_parametric(pairs, model, init)
        }
        Fitter::Rational => match opts.least_squares_support {
            Some(m) => fit_rational_least_squares(pairs, m),
            None => fit_rational_barycentric(pairs, opts.rational_tol, opts.max_support),
        },
        Fitter::Spline => fit_monotone_spline(pairs),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryOptions {
    pub solver: Solver,
    pub rule: InterpolationRule,
    /// Grid points per piece between consecutive fixed points.
    pub points_per_piece: usize,
    pub eps: f64,
    pub max_iter: usize,
    /// Degree of the constrained polynomial for least squares.
    pub degree: usize,
    /// Where to recover the field; defaults to the map's natural interval.
    pub interval: Option<(f64, f64)>,
    /// Points where `D` is not differentiable; grids keep a 1% margin.
    pub singular: Vec<f64>,
    /// Also solve Schröder's equation on the base piece and report its
    /// residual.
    pub schroeder: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            solver: Solver::Product,
            rule: InterpolationRule::BarycentricRational,
            points_per_piece: DEFAULT_GRID,
            eps: DEFAULT_EPS,
            max_iter: DEFAULT_MAX_ITER,
            degree: 3,
            interval: None,
            singular: Vec::new(),
            schroeder: false,
        }
    }
}

/// The piece whose attractor is the base fixed point of `D`.
pub fn base_piece(d: &PropagationMap, lo: f64, hi: f64) -> Result<Subinterval> {
    let p = d.base_fixed_point();
    subdivide(d, lo, hi)?
        .into_iter()
        .find(|s| (s.attractor() - p).abs() <= fp_tolerance(p))
        .ok_or(Error::NoFixedPointInClosure { lo, hi })
}

/// Recover `v` on the options' interval. The multiplier of the result is
/// per unit time: `D'(p)^{1/Δt}`.
pub fn recover_field(d: &PropagationMap, opts: &RecoveryOptions) -> Result<FieldEstimate> {
    if !d.is_contractive() {
        return Err(Error::NonContractive);
    }
    let (lo, hi) = opts.interval.unwrap_or_else(|| d.natural_interval());
    let grid = default_grid(d, lo, hi, opts.points_per_piece, &opts.singular)?;
    let dt = d.delta_t();
    let lambda = d.lambda().powf(1.0 / dt);
    let mut flags: Vec<String> = d.flags().to_vec();

    let mut est = match opts.solver {
        Solver::LeastSquares => {
            let model = constrained_polynomial(d, opts.degree);
            let fit = julia_least_squares(d, &grid, &model)?;
            let mut est = assemble_field(fit.g.clone(), lambda)?;
            let params: Vec<f64> = fit.parametric_form.map(|f| f.params).unwrap_or_default();
            let per_time = ConstrainedPolynomial { slope: model.slope / dt, ..model };
            let scaled: Vec<f64> = params.iter().map(|c| c / dt).collect();
            est.parametric_form = Some(ParametricForm { description: per_time.describe(&scaled), params: scaled });
            est.diagnostics.julia_residual = julia_residual(d, &est.g);
            est
        }
        Solver::Product | Solver::FixedPoint => {
            let (eps, n_max, rule) = (opts.eps, opts.max_iter, opts.rule);
            let sol = if opts.solver == Solver::Product {
                solve_by_pieces(d, &grid, |sub, nodes| julia_product_on(d, sub, nodes, eps, n_max, rule))?
            } else {
                solve_by_pieces(d, &grid, |sub, nodes| julia_fixed_point_on(d, sub, nodes, eps, n_max, rule))?
            };
            let pointwise = (opts.solver == Solver::Product).then_some((eps, n_max));
            let mut residual: f64 = 0.0;
            for ((sub, g), s) in sol.parts.iter().zip(&sol.scales) {
                residual = residual.max(s.abs() * piece_residual(d, sub, g, pointwise)?);
                if let Some(x) = sub.sign_violation {
                    flags.push(format!("D(z) - z changes sign inside ({}, {}) near {x}", sub.lo, sub.hi));
                }
            }
            let mut est = assemble_field(sol.g, lambda)?;
            est.diagnostics.julia_residual = residual;
            est
        }
    };

    for s in &opts.singular {
        flags.push(format!("grid keeps a 1% margin around the singular point {s}"));
    }
    if d.extrapolates(lo) || d.extrapolates(hi) {
        flags.push(format!("[{lo}, {hi}] extends past the data; D is extrapolated there"));
    }
    if opts.schroeder {
        let conj = ConjugationSolution::build(
            d,
            &base_piece(d, lo, hi)?,
            schroeder::DEFAULT_GRID,
            schroeder::DEFAULT_TOL,
            schroeder::DEFAULT_MAX_ITER,
        )?;
        est.diagnostics.schroeder_residual = Some(conj.residual_norm);
    }
    est.diagnostics.flags.extend(flags);
    Ok(est)
}

/// Samples `(x, v(x))` of a recovered field on `n` uniform points of `[lo, hi]`.
pub fn sample_field(v: &GridFunction, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    crate::numeric::linspace(lo, hi, n).into_iter().map(|x| (x, v.eval(x))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Benchmark, Example};
    use crate::numeric::linspace;

    fn exact_pairs(b: &Benchmark, lo: f64, hi: f64, n: usize, dt: f64) -> PairSet {
        PairSet::new(linspace(lo, hi, n).into_iter().map(|x| (x, b.d(x))).collect(), dt).unwrap()
    }

    fn field_error(est: &FieldEstimate, b: &Benchmark, lo: f64, hi: f64, dt: f64) -> f64 {
        linspace(lo, hi, 401).into_iter().map(|x| (est.v.eval(x) - b.v(x) / dt).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn every_solver_recovers_the_quadratic_field() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let d = b.propagation_map();
        for solver in [Solver::Product, Solver::FixedPoint, Solver::LeastSquares] {
            let opts = RecoveryOptions { solver, interval: Some((0.0, 1.0)), schroeder: true, ..Default::default() };
            let est = recover_field(&d, &opts).unwrap();
            assert!(field_error(&est, &b, 0.01, 0.9, 1.0) < 1e-8, "{solver:?}: {}", field_error(&est, &b, 0.01, 0.9, 1.0));
            assert!(est.diagnostics.julia_residual < 1e-10, "{solver:?}");
            assert!(est.diagnostics.schroeder_residual.unwrap() < 1e-12);
        }
    }

    #[test]
    fn time_step_scales_the_field() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let pairs = exact_pairs(&b, 0.0, 0.95, 60, 0.25);
        let d = fit_map(&pairs, &FitOptions::default()).unwrap();
        let est = recover_field(&d, &RecoveryOptions { interval: Some((0.0, 0.95)), ..Default::default() }).unwrap();
        assert!(field_error(&est, &b, 0.01, 0.9, 0.25) < 1e-7);

        let lsq = recover_field(
            &d,
            &RecoveryOptions { solver: Solver::LeastSquares, interval: Some((0.0, 0.95)), ..Default::default() },
        )
        .unwrap();
        let form = lsq.parametric_form.unwrap();
        // v = 4 log(0.5)(x - x²) per unit time
        assert!((form.params[0] + 4.0 * 0.5f64.ln()).abs() < 1e-6, "{:?}", form.params);
    }

    #[test]
    fn fitters() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let pairs = exact_pairs(&b, 0.0, 1.5, 50, 1.0);
        for fitter in [Fitter::Parametric, Fitter::Rational, Fitter::Spline] {
            let opts = FitOptions { fitter, model: Some((b.model(), vec![0.8])), ..Default::default() };
            let d = fit_map(&pairs, &opts).unwrap();
            assert!((d.eval(0.7) - b.d(0.7)).abs() < 1e-4, "{fitter:?}");
        }
        let missing = FitOptions { fitter: Fitter::Parametric, ..Default::default() };
        assert!(matches!(fit_map(&pairs, &missing), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn names_parse() {
        assert_eq!("fixed-point".parse::<Solver>().unwrap(), Solver::FixedPoint);
        assert_eq!("spline".parse::<Fitter>().unwrap(), Fitter::Spline);
        assert!("newton".parse::<Solver>().is_err());
    }
}
