//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fieldrec::benchmarks::{Benchmark, Example, Noise};
use fieldrec::diagnostics::{
    check_superlinearity, noise_experiment, write_reports_csv, write_table_json, ExperimentConfig, Superlinearity,
};
use fieldrec::domain::{piece_grid, subdivide, Subinterval};
use fieldrec::interp::{GridFunction, InterpolationRule};
use fieldrec::julia::{
    constrained_polynomial, default_grid, julia_fixed_point_on, julia_infinite_product, julia_least_squares,
    solve_by_pieces,
};
use fieldrec::lsq::fit_polynomial;
use fieldrec::numeric::linspace;
use fieldrec::pipeline::{fit_map, recover_field, FitOptions, RecoveryOptions, Solver};
use fieldrec::propagation::PropagationMap;
use fieldrec::schroeder::{flow, h_prime_product, koenigs_h, ConjugationSolution};
use fieldrec::trajectory::{build_pairs_resampled, PairSet, Series, TimeSeriesSet};

const EPS: f64 = 1e-12;

// Tolerances
const C1_FIELD_ERR: f64 = 1e-8;
const C1_ORACLE_RESIDUAL: f64 = 1e-12;
const C1_RUNTIME: Duration = Duration::from_secs(1);
const C2_MEDIAN_CV: f64 = 0.5;
const C2_MEDIAN_CV_LOW_NOISE: f64 = 0.05;
const C2_RUNTIME: Duration = Duration::from_secs(30);
const C3_FIELD_ERR: f64 = 1e-4;
const C3_COEFF: f64 = 0.10536;
const C3_COEFF_TOL: f64 = 1e-3;
const C4_FIELD_ERR: f64 = 1e-3;
const C4_ODD: f64 = 1e-6;
const C5_FIELD_ERR: f64 = 8e-2;
const C6_JULIA_FACTOR: f64 = 100.0;
const C6_SCHROEDER_FACTOR: f64 = 10.0;
const C6_AGREEMENT: f64 = 1e-5;
const C6_SEMIGROUP: f64 = 1e-8;
const C6_INTEGER_FLOW: f64 = 1e-9;
const C6_KOENIGS: f64 = 1e-8;
const C6_GLUE_JUMP: f64 = 1e-6;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sup_err(f: impl Fn(f64) -> f64, exact: impl Fn(f64) -> f64, xs: &[f64]) -> f64 {
    xs.iter().map(|&x| (f(x) - exact(x)).abs()).fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench(example: Example, a: f64) -> Benchmark {
    Benchmark::new(example, a).unwrap()
}

fn piece_toward(d: &PropagationMap, lo: f64, hi: f64, p: f64) -> Subinterval {
    subdivide(d, lo, hi).unwrap().into_iter().find(|s| (s.attractor() - p).abs() < 1e-9).unwrap()
}

/// Exact trajectory through `x0` sampled every quarter time unit while it
/// stays inside `(-bound, bound)`.
fn trajectory(b: &Benchmark, id: &str, x0: f64, bound: f64, t_max: f64) -> Series {
    let mut times = Vec::new();
    let mut t = 0.0;
    while t <= t_max && b.iterate(x0, t).abs() < bound {
        times.push(t);
        t += 0.25;
    }
    b.trajectory(id, x0, &times).unwrap()
}

fn cubic_pairs(sets: &[(&str, f64)]) -> PairSet {
    let b = bench(Example::Cubic, 0.9);
    let series = sets.iter().map(|&(id, x0)| trajectory(&b, id, x0, 2.04, 80.0)).collect();
    build_pairs_resampled(&TimeSeriesSet { series }, 1.0, InterpolationRule::MonotoneCubic).unwrap()
}

fn criterion_1() -> Outcome {
    let b = bench(Example::Quadratic, 0.5);
    let d = b.propagation_map();
    // oracle: the closed form satisfies Julia's equation
    let oracle = linspace(-0.9, 0.99, 2000)
        .into_iter()
        .map(|x| (b.g(b.d(x)) - b.d_prime(x) * b.g(x)).abs())
        .fold(0.0, f64::max);
    let sub = piece_toward(&d, 0.0, 1.0, 0.0);
    let grid = linspace(0.01, 0.9, 401);
    let start = Instant::now();
    let v: Vec<f64> =
        grid.iter().map(|&x| 0.5f64.ln() * julia_infinite_product(&d, &sub, x, EPS, 100_000).unwrap()).collect();
    let elapsed = start.elapsed();
    let err = grid.iter().zip(&v).map(|(&x, &vx)| (vx - b.v(x)).abs()).fold(0.0, f64::max);
    check(
        err <= C1_FIELD_ERR && oracle < C1_ORACLE_RESIDUAL && elapsed < C1_RUNTIME,
        format!("sup|v - v*| = {err:.2e} (≤ {C1_FIELD_ERR:.0e}), oracle residual {oracle:.1e}, {elapsed:?} for 401 points"),
    )
}

fn criterion_2() -> Outcome {
    let config = ExperimentConfig::default();
    let start = Instant::now();
    let table = noise_experiment(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let medians = table.median_c_v();
    let all_bounded = medians.iter().all(|m| m.is_some_and(|c| c < C2_MEDIAN_CV));
    let low = medians.first().copied().flatten();
    // errors grow with the noise level
    let rising = |f: fn(&fieldrec::diagnostics::DiagnosticsReport) -> Option<f64>| {
        let v: Vec<f64> = table.rows.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect();
        v.windows(2).all(|w| w[0] <= w[1])
    };
    let trends = rising(|r| r.eps_d) && rising(|r| r.eps_dprime) && rising(|r| r.eps_v);
    let listed: Vec<String> = config
        .sigmas
        .iter()
        .zip(&medians)
        .map(|(s, m)| format!("σ={s}: {}", m.map_or("n/a".into(), |c| format!("{c:.4}"))))
        .collect();
    check(
        config.sigmas.len() == 7
            && all_bounded
            && low.is_some_and(|c| c < C2_MEDIAN_CV_LOW_NOISE)
            && trends
            && elapsed < C2_RUNTIME,
        format!("median C_v [{}], errors rising with σ: {trends}, {elapsed:?}", listed.join(", ")),
    )
}

fn criterion_3() -> Outcome {
    let b = bench(Example::Cubic, 0.9);
    let pairs = cubic_pairs(&[("set1", 0.995)]);
    let d = fit_map(&pairs, &FitOptions::default()).map_err(|e| e.to_string())?;
    let opts = RecoveryOptions { solver: Solver::FixedPoint, interval: Some((0.0, 1.0)), ..Default::default() };
    let est = recover_field(&d, &opts).map_err(|e| e.to_string())?;
    let xs = linspace(0.01, 0.99, 2001);
    let err = sup_err(|x| est.v.eval(x), |x| b.v(x), &xs);
    let vs: Vec<f64> = xs.iter().map(|&x| est.v.eval(x)).collect();
    let coeffs = fit_polynomial(&xs, &vs, 3).map_err(|e| e.to_string())?;
    check(
        err <= C3_FIELD_ERR && (coeffs[3] - C3_COEFF).abs() <= C3_COEFF_TOL,
        format!("{} pairs, sup field error {err:.2e} (≤ {C3_FIELD_ERR:.0e}), x³ coefficient {:.6}", pairs.len(), coeffs[3]),
    )
}

fn criterion_4() -> Outcome {
    let b = bench(Example::Cubic, 0.9);
    let pairs = cubic_pairs(&[("set1", 0.995), ("set2", 1.005), ("set1'", -0.995), ("set2'", -1.005)]);
    let d = fit_map(&pairs, &FitOptions::default()).map_err(|e| e.to_string())?;
    let opts = RecoveryOptions { solver: Solver::FixedPoint, interval: Some((-2.04, 2.04)), ..Default::default() };
    let est = recover_field(&d, &opts).map_err(|e| e.to_string())?;
    let xs = linspace(-2.04, 2.04, 4001);
    let err = sup_err(|x| est.v.eval(x), |x| b.v(x), &xs);
    let odd = xs.iter().map(|&x| (est.g.eval(-x) + est.g.eval(x)).abs()).fold(0.0, f64::max);
    check(
        err <= C4_FIELD_ERR && odd <= C4_ODD,
        format!("{} pairs, sup field error {err:.2e} (≤ {C4_FIELD_ERR:.0e}), oddness {odd:.1e} (≤ {C4_ODD:.0e})", pairs.len()),
    )
}

fn criterion_5() -> Outcome {
    let b = bench(Example::Singular, 0.5);
    let xs = linspace(-0.495, 1.2, 200);
    let eval = linspace(-0.45, 1.2, 1001);
    let mut errs = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = PairSet::new(b.pairs(&xs, Noise::Relative, 0.05, &mut rng), 1.0).map_err(|e| e.to_string())?;
        let fit = FitOptions { least_squares_support: Some(3), ..Default::default() };
        let err = fit_map(&pairs, &fit)
            .and_then(|d| {
                let opts = RecoveryOptions { interval: Some((-0.5, 1.2)), singular: vec![-0.5], ..Default::default() };
                recover_field(&d, &opts)
            })
            .map(|est| sup_err(|x| est.v.eval(x), |x| b.v(x), &eval))
            .unwrap_or(f64::INFINITY);
        errs.push(err);
    }
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let med = median(errs);
    check(med <= C5_FIELD_ERR, format!("median sup field error {med:.3} (≤ {C5_FIELD_ERR}), worst seed {worst:.3}"))
}

/// Exact maps and recovery intervals of the three examples.
fn examples() -> Vec<(&'static str, Benchmark, (f64, f64), Vec<f64>)> {
    vec![
        ("quadratic", bench(Example::Quadratic, 0.5), (0.0, 1.0), vec![]),
        ("cubic", bench(Example::Cubic, 0.9), (-2.04, 2.04), vec![]),
        ("singular", bench(Example::Singular, 0.5), (-0.5, 1.2), vec![-0.5]),
    ]
}

fn criterion_6() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };

    // Julia residual of every solver on every example; least squares only
    // where a polynomial family contains the field
    for (name, b, interval, singular) in examples() {
        let d = b.propagation_map();
        let mut solvers = vec![Solver::Product, Solver::FixedPoint];
        if b.example != Example::Singular {
            solvers.push(Solver::LeastSquares);
        }
        for solver in solvers {
            let opts = RecoveryOptions { solver, interval: Some(interval), singular: singular.clone(), ..Default::default() };
            match recover_field(&d, &opts) {
                Ok(est) => {
                    let sup_g = est.g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let r = est.diagnostics.julia_residual;
                    expect(r <= C6_JULIA_FACTOR * EPS * sup_g, format!("{name}/{solver:?} Julia residual {r:.2e}"));
                }
                Err(e) => expect(false, format!("{name}/{solver:?}: {e}")),
            }
        }
    }

    // Schröder residual on the base piece of each example
    for (name, b, interval, _) in examples() {
        let d = b.propagation_map();
        let sub = piece_toward(&d, 0.0, interval.1.min(1.0), 0.0);
        match ConjugationSolution::build(&d, &sub, 401, 1e-14, 100_000) {
            Ok(c) => {
                let max_h = c.h.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                expect(
                    c.residual_norm <= C6_SCHROEDER_FACTOR * 1e-14 * max_h,
                    format!("{name} Schröder residual {:.2e}", c.residual_norm),
                );
            }
            Err(e) => expect(false, format!("{name} Schröder: {e}")),
        }
    }

    // cross-method agreement on interior points of the base piece
    let mut worst_agreement: f64 = 0.0;
    for (_, b, _, singular) in examples() {
        let d = b.propagation_map();
        let hi = if b.example == Example::Singular { 1.2 } else { 1.0 };
        let sub = piece_toward(&d, 0.0, hi, 0.0);
        let conj = ConjugationSolution::build(&d, &sub, 101, 1e-14, 100_000).unwrap();
        let interior: Vec<f64> = piece_grid(&sub, 101, &singular)
            .into_iter()
            .filter(|&x| (x - sub.lo) > 0.05 * sub.width() && (sub.hi - x) > 0.05 * sub.width())
            .collect();
        let rule = InterpolationRule::BarycentricRational;
        let alg2 = julia_fixed_point_on(&d, &sub, &interior, 1e-13, 100_000, rule).unwrap();
        let lsq = (b.example != Example::Singular)
            .then(|| julia_least_squares(&d, &interior, &constrained_polynomial(&d, 3)).unwrap());
        for &x in &interior {
            let alg1 = julia_infinite_product(&d, &sub, x, 1e-14, 100_000).unwrap();
            let hh = koenigs_h(&d, &sub, x, 1e-14, 100_000).unwrap() / h_prime_product(&d, &sub, x, 1e-14, 100_000).unwrap();
            let mut others = vec![alg2.eval(x), hh, conj.h.eval(x) / conj.h_prime.eval(x)];
            if let Some(l) = &lsq {
                others.push(l.g.eval(x));
            }
            for o in others {
                worst_agreement = worst_agreement.max((o - alg1).abs() / alg1.abs());
            }
        }
    }
    expect(worst_agreement <= C6_AGREEMENT, format!("cross-method disagreement {worst_agreement:.1e}"));

    // fractional iterates
    let quad = bench(Example::Quadratic, 0.5);
    let dq = quad.propagation_map();
    let subq = piece_toward(&dq, 0.0, 1.0, 0.0);
    let conj = ConjugationSolution::build(&dq, &subq, 401, 1e-14, 100_000).unwrap();
    let mut semigroup: f64 = 0.0;
    let mut integer: f64 = 0.0;
    for x0 in linspace(0.05, 0.9, 8) {
        for t in linspace(0.0, 2.0, 9) {
            for s in linspace(0.0, 2.0, 9) {
                let direct = flow(&dq, &conj, x0, t + s).unwrap();
                let composed = flow(&dq, &conj, flow(&dq, &conj, x0, t).unwrap(), s).unwrap();
                semigroup = semigroup.max((direct - composed).abs());
            }
        }
        let mut x = x0;
        for n in 1..=6 {
            x = quad.d(x);
            integer = integer.max((flow(&dq, &conj, x0, n as f64).unwrap() - x).abs());
        }
    }
    expect(semigroup <= C6_SEMIGROUP, format!("semigroup defect {semigroup:.1e}"));
    expect(integer <= C6_INTEGER_FLOW, format!("integer-time flow defect {integer:.1e}"));

    // Koenigs oracle values
    let h = koenigs_h(&dq, &subq, 0.5, 1e-14, 100_000).unwrap();
    let hp = h_prime_product(&dq, &subq, 0.5, 1e-14, 100_000).unwrap();
    expect((h - 1.0).abs() <= C6_KOENIGS && (hp - 4.0).abs() <= C6_KOENIGS, format!("h(0.5) = {h}, h'(0.5) = {hp}"));

    // superlinearity
    let sing = bench(Example::Singular, 0.5);
    let ds = sing.propagation_map();
    let opts = RecoveryOptions { interval: Some((-0.5, 1.2)), singular: vec![-0.5], ..Default::default() };
    let gs = recover_field(&ds, &opts).unwrap().g;
    let gq = recover_field(&dq, &RecoveryOptions { interval: Some((0.0, 1.0)), ..Default::default() }).unwrap().g;
    let sl = (check_superlinearity(&ds, &gs), check_superlinearity(&dq, &gq));
    expect(sl == (Superlinearity::Holds, Superlinearity::NotApplicable), format!("superlinearity {sl:?}"));

    // continuity of the glued cubic solution at the shared fixed point 1
    let cubic = bench(Example::Cubic, 0.9);
    let dc = cubic.propagation_map();
    let grid = default_grid(&dc, 0.0, 2.04, 200, &[]).unwrap();
    let sol = solve_by_pieces(&dc, &grid, |sub, nodes| {
        julia_fixed_point_on(&dc, sub, nodes, EPS, 100_000, InterpolationRule::BarycentricRational)
    })
    .unwrap();
    let one_sided: Vec<f64> = sol
        .parts
        .iter()
        .zip(&sol.scales)
        .map(|((_, g), s): (&(Subinterval, GridFunction), &f64)| s * g.eval(1.0))
        .collect();
    let jump = (one_sided[0] - one_sided[1]).abs();
    expect(jump < C6_GLUE_JUMP, format!("glue jump at 1: {jump:.1e}"));

    if failures.is_empty() {
        Ok(format!(
            "residuals, agreement {worst_agreement:.1e}, semigroup {semigroup:.1e}, integer flow {integer:.1e}, glue jump {jump:.1e}"
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_7() -> Outcome {
    let config = ExperimentConfig { replicates: 3, ..Default::default() };
    let render = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let table = noise_experiment(&config).map_err(|e| e.to_string())?;
        let (mut csv, mut json) = (Vec::new(), Vec::new());
        write_reports_csv(&table.rows, &mut csv).map_err(|e| e.to_string())?;
        write_table_json(&table, &mut json).map_err(|e| e.to_string())?;
        Ok((csv, json))
    };
    let first = render()?;
    let second = render()?;
    check(first == second, format!("{} CSV bytes and {} JSON bytes identical across runs", first.0.len(), first.1.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 Example 1 noiseless, infinite product", criterion_1),
        ("2 Example 1 noise sweep, stability constant", criterion_2),
        ("3 Example 2 case (a), fixed point on fitted D", criterion_3),
        ("4 Example 2 case (b), multiple sets", criterion_4),
        ("5 Example 3, 5% relative noise", criterion_5),
        ("6 property suite", criterion_6),
        ("7 determinism of the diagnose report", criterion_7),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
