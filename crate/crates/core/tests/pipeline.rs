//! Trajectory file → pairs → D → v, against closed forms.

use std::fs::File;

use fieldrec::benchmarks::{Benchmark, Example};
use fieldrec::numeric::linspace;
use fieldrec::pipeline::{base_piece, fit_map, recover_field, FitOptions, Fitter, RecoveryOptions, Solver};
use fieldrec::schroeder::{flow, ConjugationSolution};
use fieldrec::trajectory::{build_pairs_uniform, load_series, write_series, IngestOptions, TimeSeriesSet};

fn quadratic_file(dir: &tempfile::TempDir) -> std::path::PathBuf {
    let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
    let times: Vec<f64> = (0..12).map(f64::from).collect();
    let series = [0.99, 0.9, 0.75, 0.6]
        .iter()
        .enumerate()
        .map(|(i, &x0)| b.trajectory(format!("s{i}"), x0, &times).unwrap())
        .collect();
    let path = dir.path().join("traj.csv");
    write_series(&TimeSeriesSet { series }, File::create(&path).unwrap()).unwrap();
    path
}

fn sup_error(opts: &FitOptions, solver: Solver, path: &std::path::Path) -> f64 {
    let truth = Benchmark::new(Example::Quadratic, 0.5).unwrap();
    let ts = load_series(path, &IngestOptions::default()).unwrap();
    let d = fit_map(&build_pairs_uniform(&ts, 1.0).unwrap(), opts).unwrap();
    let est = recover_field(&d, &RecoveryOptions { solver, interval: Some((0.0, 0.99)), ..Default::default() }).unwrap();
    linspace(0.01, 0.9, 201).into_iter().map(|x| (est.v.eval(x) - truth.v(x)).abs()).fold(0.0, f64::max)
}

#[test]
fn every_fitter_and_solver() {
    let dir = tempfile::tempdir().unwrap();
    let path = quadratic_file(&dir);
    let truth = Benchmark::new(Example::Quadratic, 0.5).unwrap();
    let cases = [
        (FitOptions { fitter: Fitter::Parametric, model: Some((truth.model(), vec![0.8])), ..Default::default() }, 1e-8),
        (FitOptions::default(), 1e-6),
        // the spline's derivative at the fixed point is only second-order accurate
        (FitOptions { fitter: Fitter::Spline, ..Default::default() }, 2e-2),
    ];
    for (opts, tol) in cases {
        for solver in [Solver::Product, Solver::FixedPoint, Solver::LeastSquares] {
            let err = sup_error(&opts, solver, &path);
            assert!(err < tol, "{:?}/{solver:?}: {err}", opts.fitter);
        }
    }
}

#[test]
fn fractional_iterates_of_a_fitted_map() {
    let dir = tempfile::tempdir().unwrap();
    let ts = load_series(quadratic_file(&dir), &IngestOptions::default()).unwrap();
    let d = fit_map(&build_pairs_uniform(&ts, 1.0).unwrap(), &FitOptions::default()).unwrap();
    let truth = Benchmark::new(Example::Quadratic, 0.5).unwrap();
    let conj = ConjugationSolution::build(&d, &base_piece(&d, 0.0, 0.99).unwrap(), 401, 1e-14, 100_000).unwrap();
    for x0 in [0.2, 0.5, 0.8] {
        for t in [0.25, 0.5, 1.5, 3.0] {
            let x = flow(&d, &conj, x0, t).unwrap();
            assert!((x - truth.iterate(x0, t)).abs() < 1e-6, "{x0} {t}: {x}");
        }
    }
}
