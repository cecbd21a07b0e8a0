//! The propagation (unit-time) map `D` and ways of building it from pairs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{fp_tolerance, scan_fixed_points, FIXED_POINT_TOL};
use crate::error::{Error, Result};
use crate::interp::{Interpolant, InterpolationRule};
use crate::lsq::gauss_newton;
use crate::numeric::ScalarMap;
use crate::trajectory::PairSet;

/// Fraction of the data width by which a fitted map's domain extends past
/// the data on each side, so that fixed points sitting at the edge of the
/// data are still found.
pub const DOMAIN_PAD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub location: f64,
    /// `D'(location)`.
    pub multiplier: f64,
    /// Found as a touching minimum of `|D(z) - z|` rather than a sign change.
    pub tangential: bool,
}

impl FixedPoint {
    pub fn is_attracting(&self) -> bool {
        self.multiplier > 0.0 && self.multiplier < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricForm {
    pub description: String,
    pub params: Vec<f64>,
}

pub type ModelFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A family `x ↦ f(params, x)` with its `x`-derivative.
#[derive(Clone)]
pub struct ParametricModel {
    pub arity: usize,
    pub eval: ModelFn,
    pub deriv_x: ModelFn,
    pub description: String,
}

impl fmt::Debug for ParametricModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricModel")
            .field("arity", &self.arity)
            .field("description", &self.description)
            .finish()
    }
}

impl ParametricModel {
    pub fn new(
        arity: usize,
        description: impl Into<String>,
        eval: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        deriv_x: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ParametricModel { arity, eval: Arc::new(eval), deriv_x: Arc::new(deriv_x), description: description.into() }
    }

    /// Compare `deriv_x` with central differences of `eval` at the probes;
    /// returns the first probe where they disagree by more than 1e-4
    /// relative.
    pub fn check_consistency(&self, params: &[f64], probes: &[f64]) -> Option<f64> {
        probes.iter().cloned().find(|&x| {
            let h = 1e-6 * x.abs().max(1e-2);
            let fd = ((self.eval)(params, x + h) - (self.eval)(params, x - h)) / (2.0 * h);
            let an = (self.deriv_x)(params, x);
            (fd - an).abs() > 1e-4 * an.abs().max(1e-8)
        })
    }

    /// The member with the given parameters as a map on `[lo, hi]`.
    pub fn instantiate(&self, params: &[f64], lo: f64, hi: f64) -> ScalarMap {
        let (e, d) = (self.eval.clone(), self.deriv_x.clone());
        let (p1, p2) = (params.to_vec(), params.to_vec());
        ScalarMap::new(move |x| e(&p1, x), lo, hi).with_derivative(move |x| d(&p2, x))
    }
}

/// An evaluable `D` with its fixed points and the multiplier `λ` at the
/// base fixed point.
#[derive(Debug, Clone)]
pub struct PropagationMap {
    map: ScalarMap,
    fixed_points: Vec<FixedPoint>,
    base_fixed_point: f64,
    lambda: f64,
    delta_t: f64,
    residual_norm: f64,
    data_hull: Option<(f64, f64)>,
    image_hull: Option<(f64, f64)>,
    parametric: Option<ParametricForm>,
    flags: Vec<String>,
}

impl PropagationMap {
    /// Wrap `map`, locate its fixed points on its domain and pick the base
    /// fixed point: the attracting one nearest the middle of the domain.
    pub fn new(map: ScalarMap, delta_t: f64) -> Self {
        let (lo, hi) = map.domain();
        let scan = scan_fixed_points(&map, lo, hi, FIXED_POINT_TOL);
        let mut flags = Vec::new();
        for fp in &scan.rejected {
            let what = if fp.tangential { "tangential" } else { "non-hyperbolic" };
            flags.push(format!("{what} fixed point at {}", fp.location));
        }
        let mid = 0.5 * (lo + hi);
        let attracting = scan
            .fixed_points
            .iter()
            .filter(|f| f.is_attracting())
            .min_by(|a, b| (a.location - mid).abs().total_cmp(&(b.location - mid).abs()));
        let (base, lambda) = match attracting {
            Some(f) => (f.location, f.multiplier),
            None => {
                flags.push("non-contractive: no fixed point with multiplier in (0, 1)".into());
                match scan.fixed_points.iter().find(|f| f.multiplier.is_finite()) {
                    Some(f) => (f.location, f.multiplier),
                    None => (f64::NAN, f64::NAN),
                }
            }
        };
        PropagationMap {
            map,
            fixed_points: scan.fixed_points,
            base_fixed_point: base,
            lambda,
            delta_t,
            residual_norm: 0.0,
            data_hull: None,
            image_hull: None,
            parametric: None,
            flags,
        }
    }

    /// Use `fp` as the base fixed point.
    pub fn with_base_fixed_point(mut self, fp: f64) -> Result<Self> {
        self.lambda = estimate_multiplier(&self, fp)?;
        self.base_fixed_point = fp;
        self.flags.retain(|f| !f.starts_with("non-contractive"));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            self.flags.push(format!("non-contractive: multiplier {} at base fixed point", self.lambda));
        }
        Ok(self)
    }

    fn with_fit_info(mut self, residual_norm: f64, pairs: &PairSet) -> Self {
        self.residual_norm = residual_norm;
        self.data_hull = Some(pairs.hull());
        let ys = pairs.ys();
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.image_hull = Some((lo, hi));
        self
    }

    pub fn map(&self) -> &ScalarMap {
        &self.map
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.map.eval(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.map.derivative(x)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.map.domain()
    }

    pub fn fixed_points(&self) -> &[FixedPoint] {
        &self.fixed_points
    }

    pub fn base_fixed_point(&self) -> f64 {
        self.base_fixed_point
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_contractive(&self) -> bool {
        self.lambda > 0.0 && self.lambda < 1.0
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    /// Euclidean norm of the fit residuals (0 for analytic maps).
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    /// Hull of the data abscissas, for fitted maps.
    pub fn data_hull(&self) -> Option<(f64, f64)> {
        self.data_hull
    }

    /// Hull of the data ordinates `y ≈ D(x)`, for fitted maps.
    pub fn image_hull(&self) -> Option<(f64, f64)> {
        self.image_hull
    }

    /// Interval covered by the data abscissas (within the map's domain),
    /// widened to take in fixed points just outside it; the whole domain for
    /// analytic maps.
    pub fn natural_interval(&self) -> (f64, f64) {
        let (dom_lo, dom_hi) = self.domain();
        let (mut lo, mut hi) = match self.data_hull {
            Some((a, b)) => (a.max(dom_lo), b.min(dom_hi)),
            None => return (dom_lo, dom_hi),
        };
        for fp in &self.fixed_points {
            lo = lo.min(fp.location);
            hi = hi.max(fp.location);
        }
        (lo, hi)
    }

    /// True when `x` lies outside the data the map was fitted to (beyond
    /// rounding of the hull).
    pub fn extrapolates(&self, x: f64) -> bool {
        self.data_hull.is_some_and(|(lo, hi)| {
            let slack = 1e-9 * (hi - lo);
            x < lo - slack || x > hi + slack
        })
    }

    pub fn parametric(&self) -> Option<&ParametricForm> {
        self.parametric.as_ref()
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }
}

/// `λ = D'(fp)`, after checking that `fp` is a fixed point.
pub fn estimate_multiplier(d: &PropagationMap, fp: f64) -> Result<f64> {
    let gap = (d.eval(fp) - fp).abs();
    if !(gap <= fp_tolerance(fp)) {
        return Err(Error::NotAFixedPoint { x: fp, gap });
    }
    Ok(d.derivative(fp))
}

fn padded_hull(pairs: &PairSet) -> (f64, f64) {
    let (lo, hi) = pairs.hull();
    let pad = DOMAIN_PAD * (hi - lo);
    (lo - pad, hi + pad)
}

/// Least-squares fit of a parametric family to the pairs.
pub fn fit_parametric(pairs: &PairSet, model: &ParametricModel, init: &[f64]) -> Result<PropagationMap> {
    if init.len() != model.arity {
        return Err(Error::InvalidParameter(format!(
            "{} initial values for a model with {} parameters",
            init.len(),
            model.arity
        )));
    }
    if pairs.len() < model.arity {
        return Err(Error::SingularJacobian(format!("{} pairs for {} parameters", pairs.len(), model.arity)));
    }
    let data = pairs.pairs();
    let eval = model.eval.clone();
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let fitted: Vec<f64> = data.iter().map(|&(x, _)| eval(p, x)).collect();
        // a propagation map is increasing; leaving that region means the
        // parameters crossed a singularity of the family
        if fitted.windows(2).any(|w| !(w[1] >= w[0])) {
            return None;
        }
        Some(fitted.iter().zip(data).map(|(f, &(_, y))| f - y).collect())
    };
    let fit = gauss_newton(residuals, None::<fn(&[f64]) -> nalgebra::DMatrix<f64>>, init)?;
    let (lo, hi) = padded_hull(pairs);
    let mut d = PropagationMap::new(model.instantiate(&fit.params, lo, hi), pairs.delta_t())
        .with_fit_info(fit.residual_norm, pairs);
    d.parametric = Some(ParametricForm { description: model.description.clone(), params: fit.params });
    Ok(d)
}

/// Monotone piecewise-cubic interpolation of the pairs.
pub fn fit_monotone_spline(pairs: &PairSet) -> Result<PropagationMap> {
    if pairs.len() < 2 {
        return Err(Error::Precondition("a spline needs at least two pairs".into()));
    }
    let data = pairs.pairs();
    if let Some(w) = data.windows(2).find(|w| !(w[1].1 > w[0].1)) {
        return Err(Error::NonMonotoneData { x: w[1].0 });
    }
    let spline = Arc::new(Interpolant::new(InterpolationRule::MonotoneCubic, pairs.xs(), pairs.ys())?);
    let (lo, hi) = padded_hull(pairs);
    let s1 = spline.clone();
    let map = ScalarMap::new(move |x| s1.eval(x), lo, hi).with_derivative(move |x| spline.derivative(x));
    Ok(PropagationMap::new(map, pairs.delta_t()).with_fit_info(0.0, pairs))
}

/// Wrap a fitted map: domain padded around the data, residuals recorded.
pub(crate) fn from_fitted(map: ScalarMap, pairs: &PairSet) -> PropagationMap {
    let (lo, hi) = padded_hull(pairs);
    let residual = pairs.pairs().iter().map(|&(x, y)| (map.eval(x) - y).powi(2)).sum::<f64>().sqrt();
    PropagationMap::new(map.restricted(lo, hi), pairs.delta_t()).with_fit_info(residual, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Benchmark, Example};
    use crate::numeric::linspace;
    use approx::assert_abs_diff_eq;

    fn quad_pairs(a: f64, xs: &[f64]) -> PairSet {
        let b = Benchmark::new(Example::Quadratic, a).unwrap();
        PairSet::new(xs.iter().map(|&x| (x, b.d(x))).collect(), 1.0).unwrap()
    }

    #[test]
    fn parametric_recovers_exact_parameter() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let pairs = quad_pairs(0.5, &linspace(0.0, 1.9, 100));
        let d = fit_parametric(&pairs, &b.model(), &[0.8]).unwrap();
        assert_abs_diff_eq!(d.parametric().unwrap().params[0], 0.5, epsilon = 1e-10);
        assert!(d.residual_norm() < 1e-10);
        assert_abs_diff_eq!(d.base_fixed_point(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.lambda(), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn parametric_needs_enough_pairs() {
        let two = ParametricModel::new(2, "a x + b", |p, x| p[0] * x + p[1], |p, _| p[0]);
        let pairs = PairSet::new(vec![(0.3, 0.2)], 1.0).unwrap();
        assert!(matches!(fit_parametric(&pairs, &two, &[1.0, 0.0]), Err(Error::SingularJacobian(_))));
    }

    #[test]
    fn spline_reproduces_lines() {
        let pairs = PairSet::new(linspace(0.0, 1.0, 11).into_iter().map(|x| (x, 0.5 * x)).collect(), 1.0).unwrap();
        let d = fit_monotone_spline(&pairs).unwrap();
        for x in linspace(0.0, 1.0, 37) {
            assert_abs_diff_eq!(d.eval(x), 0.5 * x, epsilon = 1e-15);
            assert_abs_diff_eq!(d.derivative(x), 0.5, epsilon = 1e-13);
        }
    }

    #[test]
    fn spline_is_accurate_on_smooth_data() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let d = fit_monotone_spline(&quad_pairs(0.5, &linspace(0.0, 0.9, 50))).unwrap();
        let err = linspace(0.0, 0.9, 2001).into_iter().map(|x| (d.eval(x) - b.d(x)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "spline error {err:e}");
    }

    #[test]
    fn spline_rejects_decreasing_data() {
        let pairs = PairSet::new(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)], 1.0).unwrap();
        assert!(matches!(fit_monotone_spline(&pairs), Err(Error::NonMonotoneData { .. })));
    }

    #[test]
    fn multipliers_of_the_benchmarks() {
        for (ex, a) in [(Example::Quadratic, 0.5), (Example::Cubic, 0.9), (Example::Singular, 0.5)] {
            let d = Benchmark::new(ex, a).unwrap().propagation_map();
            assert_abs_diff_eq!(estimate_multiplier(&d, 0.0).unwrap(), a, epsilon = 1e-14);
        }
        let d = Benchmark::new(Example::Quadratic, 0.5).unwrap().propagation_map();
        assert!(matches!(estimate_multiplier(&d, 0.3), Err(Error::NotAFixedPoint { .. })));
    }

    #[test]
    fn model_consistency_check() {
        let b = Benchmark::new(Example::Cubic, 0.9).unwrap();
        assert_eq!(b.model().check_consistency(&[0.9], &linspace(-2.0, 2.0, 17)), None);
        let wrong = ParametricModel::new(1, "bad", |p, x| p[0] * x * x, |p, x| p[0] * x);
        assert!(wrong.check_consistency(&[1.0], &[0.5]).is_some());
    }
}
