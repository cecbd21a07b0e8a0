//! Recovery quality: relative errors, the stability constant
//! `C_v = ε_v / (ε_D + ε_D')`, the monotonicity and superlinearity
//! conditions, and the noise experiment.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{Benchmark, Example, Noise};
use crate::domain::{step, step_derivative, subdivide, Direction, Subinterval};
use crate::error::{Error, Result};
use crate::interp::GridFunction;
use crate::julia::{julia_infinite_product, DEFAULT_EPS, DEFAULT_MAX_ITER};
use crate::numeric::{linspace, second_derivative, ScalarMap};
use crate::propagation::{fit_parametric, PropagationMap};
use crate::trajectory::PairSet;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Noise level of the data this report describes, if synthetic.
    pub sigma: Option<f64>,
    pub eps_d: Option<f64>,
    pub eps_dprime: Option<f64>,
    pub eps_v: Option<f64>,
    /// `None` when the errors are unknown or `ε_D + ε_D' = 0`.
    pub c_v: Option<f64>,
    pub julia_residual: f64,
    pub schroeder_residual: Option<f64>,
    pub flags: Vec<String>,
}

impl DiagnosticsReport {
    /// Record the three relative errors and derive `C_v` from them.
    pub fn set_errors(&mut self, eps_d: f64, eps_dprime: f64, eps_v: f64) {
        self.eps_d = Some(eps_d);
        self.eps_dprime = Some(eps_dprime);
        self.eps_v = Some(eps_v);
        self.c_v = stability_constant(eps_v, eps_d, eps_dprime).ok();
        if self.c_v.is_none() {
            self.flags.push("C_v undefined: eps_D + eps_Dprime = 0".into());
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    sigma: Option<f64>,
    #[serde(rename = "eps_D")]
    eps_d: Option<f64>,
    #[serde(rename = "eps_Dprime")]
    eps_dprime: Option<f64>,
    eps_v: Option<f64>,
    #[serde(rename = "C_v")]
    c_v: Option<f64>,
    flags: String,
}

/// One CSV row per report; flags joined by `;`.
pub fn write_reports_csv(reports: &[DiagnosticsReport], out: impl Write) -> Result<()> {
    // header written up front so an empty report still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["sigma", "eps_D", "eps_Dprime", "eps_v", "C_v", "flags"])
        .map_err(|e| Error::io("<csv>", e.into()))?;
    for r in reports {
        w.serialize(CsvRow {
            sigma: r.sigma,
            eps_d: r.eps_d,
            eps_dprime: r.eps_dprime,
            eps_v: r.eps_v,
            c_v: r.c_v,
            flags: r.flags.join(";"),
        })
        .map_err(|e| Error::io("<csv>", e.into()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Pretty-printed JSON of the whole table, replicates included.
pub fn write_table_json(table: &ExperimentTable, out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, table).map_err(|e| Error::io("<json>", e.into()))
}

/// Inverse of [`write_reports_csv`]; residuals are not part of the table.
pub fn read_reports_csv(input: impl Read, origin: &Path) -> Result<Vec<DiagnosticsReport>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: origin.display().to_string(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        out.push(DiagnosticsReport {
            sigma: row.sigma,
            eps_d: row.eps_d,
            eps_dprime: row.eps_dprime,
            eps_v: row.eps_v,
            c_v: row.c_v,
            flags: row.flags.split(';').filter(|s| !s.is_empty()).map(String::from).collect(),
            ..Default::default()
        });
    }
    Ok(out)
}

/// `sup|approx - reference| / sup|reference|` over `grid`.
pub fn relative_errors(reference: &ScalarMap, approx: &ScalarMap, grid: &[f64]) -> Result<f64> {
    relative_error_of(|x| reference.eval(x), |x| approx.eval(x), grid)
}

pub(crate) fn relative_error_of(reference: impl Fn(f64) -> f64, approx: impl Fn(f64) -> f64, grid: &[f64]) -> Result<f64> {
    let r: Vec<f64> = grid.iter().map(|&x| reference(x)).collect();
    let a: Vec<f64> = grid.iter().map(|&x| approx(x)).collect();
    relative_error_values(&r, &a)
}

fn relative_error_values(reference: &[f64], approx: &[f64]) -> Result<f64> {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for (&r, &a) in reference.iter().zip(approx) {
        num = num.max((a - r).abs());
        den = den.max(r.abs());
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(num / den)
}

pub fn stability_constant(eps_v: f64, eps_d: f64, eps_dprime: f64) -> Result<f64> {
    let den = eps_d + eps_dprime;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    Ok(eps_v / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityCheck {
    pub holds: bool,
    /// First grid point where `ρ' > 0` fails.
    pub witness: Option<f64>,
    /// Grid points where `D''` could not be estimated.
    pub skipped: usize,
}

/// Whether `ρ(x) = (F(x) - p)/(F'(x)(x - p))` is increasing on `grid`, with
/// `F` the map iterated on `sub` (`D` or `D⁻¹`) and `p` its attractor.
///
/// Uses the sign of the numerator of `ρ'`,
/// `F'²(x-p) - (F-p)(F''(x-p) + F')`, which vanishes identically for a
/// linear map; values within rounding of zero count as failures.
pub fn check_monotonicity_condition(d: &PropagationMap, sub: &Subinterval, grid: &[f64]) -> MonotonicityCheck {
    let p = sub.attractor();
    let mut skipped = 0;
    for &x in grid {
        if x == p {
            continue;
        }
        let Ok(fx) = step(d, sub, x) else {
            skipped += 1;
            continue;
        };
        let f1 = step_derivative(d, sub, x, fx);
        let f2 = match sub.direction {
            Direction::Forward => second_derivative(d.map(), x),
            Direction::Backward => second_derivative(d.map(), fx).map(|dd| -dd * f1.powi(3)),
        };
        let Ok(f2) = f2 else {
            skipped += 1;
            continue;
        };
        let u = x - p;
        let numerator = f1 * f1 * u - (fx - p) * (f2 * u + f1);
        let scale = f1 * f1 * u.abs();
        if !(numerator > 1e-9 * scale) {
            return MonotonicityCheck { holds: false, witness: Some(x), skipped };
        }
    }
    MonotonicityCheck { holds: true, witness: None, skipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Superlinearity {
    Holds,
    Fails { x: f64 },
    /// `D''(p) ≥ 0`, so the bound `g(x) ≥ x - p` is not implied.
    NotApplicable,
}

/// If `D''(p) < 0` at the base fixed point, check `g(x) ≥ x - p` on the grid
/// points of `g` to the right of `p`.
pub fn check_superlinearity(d: &PropagationMap, g: &GridFunction) -> Superlinearity {
    let p = d.base_fixed_point();
    match second_derivative(d.map(), p) {
        Ok(dd) if dd < -1e-6 => {}
        _ => return Superlinearity::NotApplicable,
    }
    for (&x, &gx) in g.grid().iter().zip(g.values()) {
        if x >= p && gx < (x - p) - 1e-8 {
            return Superlinearity::Fails { x };
        }
    }
    Superlinearity::Holds
}

/// Synthetic-data experiment: for each noise level, fit the example's
/// family to noisy pairs and compare `D`, `D'` and the recovered `v` with
/// the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: Example,
    pub a: f64,
    pub noise: Noise,
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub replicates: usize,
    /// Pairs per data set, with `x` uniform on `x_range`.
    pub n_pairs: usize,
    pub x_range: (f64, f64),
    /// Initial parameter for the fit.
    pub init: f64,
    /// Where `ε_v` is measured.
    pub eval_range: (f64, f64),
    pub eval_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            example: Example::Quadratic,
            a: 0.5,
            noise: Noise::AdditiveInterval,
            sigmas: vec![0.1, 0.5, 0.9, 1.9, 2.9, 3.9, 4.5],
            seed: 1,
            replicates: 10,
            n_pairs: 100,
            x_range: (0.0, 1.9),
            init: 0.8,
            eval_range: (0.01, 0.9),
            eval_points: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    /// One row per noise level: medians of the replicate errors, with `C_v`
    /// formed from those medians.
    pub rows: Vec<DiagnosticsReport>,
    pub replicates: Vec<Vec<DiagnosticsReport>>,
}

impl ExperimentTable {
    /// Median over replicates of the per-replicate `C_v`, per row.
    pub fn median_c_v(&self) -> Vec<Option<f64>> {
        self.replicates.iter().map(|reps| median(reps.iter().filter_map(|r| r.c_v))).collect()
    }
}

fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Each (row, replicate) draws from its own stream of the seeded generator,
/// so rows are reproducible independently of each other.
pub fn noise_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    let truth = Benchmark::new(config.example, config.a)?;
    if config.replicates == 0 || config.n_pairs < 2 || config.eval_points < 2 {
        return Err(Error::InvalidParameter("replicates, n_pairs and eval_points must be positive".into()));
    }
    let xs = linspace(config.x_range.0, config.x_range.1, config.n_pairs);
    let eval = linspace(config.eval_range.0, config.eval_range.1, config.eval_points);
    let mut rows = Vec::new();
    let mut replicates = Vec::new();
    for (row, &sigma) in config.sigmas.iter().enumerate() {
        let mut reps = Vec::with_capacity(config.replicates);
        for rep in 0..config.replicates {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(((row as u64) << 32) | rep as u64);
            let pairs = truth.pairs(&xs, config.noise, sigma, &mut rng);
            let mut report = DiagnosticsReport { sigma: Some(sigma), ..Default::default() };
            match replicate_errors(&truth, pairs, config.init, &xs, &eval) {
                Ok((e_d, e_dp, e_v)) => report.set_errors(e_d, e_dp, e_v),
                Err(e) => report.flags.push(format!("replicate {rep} failed: {e}")),
            }
            reps.push(report);
        }
        let mut summary = DiagnosticsReport { sigma: Some(sigma), ..Default::default() };
        let (e_d, e_dp, e_v) = (
            median(reps.iter().filter_map(|r| r.eps_d)),
            median(reps.iter().filter_map(|r| r.eps_dprime)),
            median(reps.iter().filter_map(|r| r.eps_v)),
        );
        if let (Some(a), Some(b), Some(c)) = (e_d, e_dp, e_v) {
            summary.set_errors(a, b, c);
        }
        let failed = reps.iter().filter(|r| r.eps_v.is_none()).count();
        if failed > 0 {
            summary.flags.push(format!("{failed} of {} replicates failed", reps.len()));
        }
        rows.push(summary);
        replicates.push(reps);
    }
    Ok(ExperimentTable { rows, replicates })
}

fn replicate_errors(truth: &Benchmark, pairs: Vec<(f64, f64)>, init: f64, xs: &[f64], eval: &[f64]) -> Result<(f64, f64, f64)> {
    let d = fit_parametric(&PairSet::new(pairs, 1.0)?, &truth.model(), &[init])?;
    let eps_d = relative_error_of(|x| truth.d(x), |x| d.eval(x), xs)?;
    let eps_dp = relative_error_of(|x| truth.d_prime(x), |x| d.derivative(x), xs)?;

    // the fitted field on the piece holding the evaluation range, from the
    // product at each point
    let (lo, hi) = (eval[0], eval[eval.len() - 1]);
    let (dlo, dhi) = d.natural_interval();
    let sub = subdivide(&d, dlo, dhi)?
        .into_iter()
        .find(|s| s.lo <= lo && s.hi >= hi)
        .ok_or(Error::NoFixedPointInClosure { lo, hi })?;
    let log_lambda = sub.multiplier_at_attractor.ln();
    let mut fitted = Vec::with_capacity(eval.len());
    for &x in eval {
        fitted.push(log_lambda * julia_infinite_product(&d, &sub, x, DEFAULT_EPS, DEFAULT_MAX_ITER)?);
    }
    let exact: Vec<f64> = eval.iter().map(|&x| truth.v(x)).collect();
    let eps_v = relative_error_values(&exact, &fitted)?;
    Ok((eps_d, eps_dp, eps_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Benchmark, Example};
    use crate::domain::subdivide;
    use crate::interp::InterpolationRule;
    use crate::numeric::linspace;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn quad_field() -> ScalarMap {
        ScalarMap::new(|x| 0.5f64.ln() * x * (1.0 - x), 0.0, 1.0)
    }

    #[test]
    fn relative_error_examples() {
        let grid = linspace(0.0, 1.0, 101);
        let v = quad_field();
        assert_eq!(relative_errors(&v, &v, &grid).unwrap(), 0.0);
        let scaled = ScalarMap::new(|x| 1.1 * 0.5f64.ln() * x * (1.0 - x), 0.0, 1.0);
        assert_abs_diff_eq!(relative_errors(&v, &scaled, &grid).unwrap(), 0.1, epsilon = 1e-12);
        let zero = ScalarMap::new(|_| 0.0, 0.0, 1.0);
        assert!(matches!(relative_errors(&zero, &v, &grid), Err(Error::ZeroReference)));
    }

    #[test]
    fn stability_constant_examples() {
        assert_abs_diff_eq!(stability_constant(0.019, 2.51, 0.026).unwrap(), 0.019 / 2.536, epsilon = 1e-15);
        assert_abs_diff_eq!(stability_constant(0.019, 2.51, 0.026).unwrap(), 0.00749, epsilon = 1e-5);
        assert_abs_diff_eq!(stability_constant(0.49, 2.3, 0.67).unwrap(), 0.1650, epsilon = 1e-4);
        assert_eq!(stability_constant(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(stability_constant(0.1, 0.0, 0.0), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn undefined_stability_constant_is_flagged() {
        let mut r = DiagnosticsReport::default();
        r.set_errors(0.0, 0.0, 1e-12);
        assert_eq!(r.c_v, None);
        assert_eq!(r.flags.len(), 1);
        r.set_errors(0.1, 0.1, 0.02);
        assert_abs_diff_eq!(r.c_v.unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut a = DiagnosticsReport { sigma: Some(0.1), ..Default::default() };
        a.set_errors(2.5, 0.03, 0.02);
        a.flags.push("extrapolated".into());
        let b = DiagnosticsReport { sigma: Some(0.0), eps_v: Some(1e-10), ..Default::default() };
        let mut buf = Vec::new();
        write_reports_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sigma,eps_D,eps_Dprime,eps_v,C_v,flags\n"), "{text}");
        let back = read_reports_csv(&buf[..], Path::new("mem")).unwrap();

        let mut empty = Vec::new();
        write_reports_csv(&[], &mut empty).unwrap();
        assert_eq!(empty, b"sigma,eps_D,eps_Dprime,eps_v,C_v,flags\n");
        assert!(read_reports_csv(&empty[..], Path::new("mem")).unwrap().is_empty());
        assert_eq!(back, vec![a, b]);
    }

    fn piece(b: &Benchmark, lo: f64, hi: f64) -> (PropagationMap, Subinterval) {
        let d = b.propagation_map();
        let sub = subdivide(&d, lo, hi).unwrap().into_iter().find(|s| s.attractor().abs() < 1e-12).unwrap();
        (d, sub)
    }

    #[test]
    fn monotonicity_of_the_quadratic_map_fails() {
        // ρ(x) = 1 - x/2 is decreasing
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let (d, sub) = piece(&b, 0.0, 1.0);
        let c = check_monotonicity_condition(&d, &sub, &linspace(0.1, 0.9, 9));
        assert!(!c.holds);
        assert_eq!(c.witness, Some(0.1));
    }

    #[test]
    fn monotonicity_of_a_linear_map_is_a_boundary_case() {
        let d = PropagationMap::new(ScalarMap::new(|x| 0.5 * x, -1.0, 1.0).with_derivative(|_| 0.5), 1.0);
        let sub = subdivide(&d, 0.0, 1.0).unwrap().remove(0);
        assert!(!check_monotonicity_condition(&d, &sub, &linspace(0.1, 0.9, 9)).holds);
    }

    #[test]
    fn monotonicity_of_the_singular_map_matches_closed_form() {
        let b = Benchmark::new(Example::Singular, 0.5).unwrap();
        let (d, sub) = piece(&b, 0.0, 1.2);
        let rho = |x: f64| b.d(x) / (b.d_prime(x) * x);
        for x in linspace(0.05, 1.15, 23) {
            let h = 1e-5;
            let slope = (rho(x + h) - rho(x - h)) / (2.0 * h);
            let c = check_monotonicity_condition(&d, &sub, &[x]);
            assert_eq!(c.holds, slope > 0.0, "x = {x}, ρ' = {slope}");
        }
    }

    #[test]
    fn superlinearity() {
        let sing = Benchmark::new(Example::Singular, 0.5).unwrap();
        let grid = linspace(0.0, 1.2, 61);
        let g = GridFunction::new(grid.clone(), grid.iter().map(|&x| sing.g(x)).collect(), InterpolationRule::Linear)
            .unwrap();
        assert_eq!(check_superlinearity(&sing.propagation_map(), &g), Superlinearity::Holds);
        let too_small =
            GridFunction::new(grid.clone(), grid.iter().map(|&x| 0.5 * x).collect(), InterpolationRule::Linear).unwrap();
        assert!(matches!(check_superlinearity(&sing.propagation_map(), &too_small), Superlinearity::Fails { .. }));

        let quad = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        assert_eq!(check_superlinearity(&quad.propagation_map(), &g), Superlinearity::NotApplicable);
        let linear = PropagationMap::new(ScalarMap::new(|x| 0.5 * x, -1.0, 2.0).with_derivative(|_| 0.5), 1.0);
        assert_eq!(check_superlinearity(&linear, &g), Superlinearity::NotApplicable);
    }

    fn small_config(sigmas: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig { sigmas, replicates: 3, ..Default::default() }
    }

    #[test]
    fn noiseless_experiment_recovers_the_field() {
        let table = noise_experiment(&small_config(vec![0.0])).unwrap();
        for r in &table.replicates[0] {
            assert!(r.eps_v.unwrap() < 1e-8, "{r:?}");
            // an exact fit leaves nothing to divide by
            if r.eps_d == Some(0.0) && r.eps_dprime == Some(0.0) {
                assert_eq!(r.c_v, None);
            }
        }
    }

    #[test]
    fn experiment_is_bounded_and_reproducible() {
        let config = ExperimentConfig { replicates: 10, ..small_config(vec![0.1]) };
        let table = noise_experiment(&config).unwrap();
        assert_eq!(table, noise_experiment(&config).unwrap());
        assert!(table.median_c_v()[0].unwrap() < 0.1, "{:?}", table.rows);
        assert!(table.rows[0].flags.is_empty(), "{:?}", table.rows[0].flags);
        let empty = noise_experiment(&small_config(vec![])).unwrap();
        assert!(empty.rows.is_empty());
    }

    #[test]
    fn median_of_even_and_odd_counts() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median([]), None);
    }

    proptest! {
        #[test]
        fn relative_error_is_scale_invariant(c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0], k in 0.5f64..2.0) {
            let grid = linspace(0.0, 1.0, 51);
            let r = |x: f64| x * (1.0 - x);
            let a = |x: f64| k * x * (1.0 - x) + 0.01 * x;
            let base = relative_error_of(r, a, &grid).unwrap();
            let scaled = relative_error_of(|x| c * r(x), |x| c * a(x), &grid).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
