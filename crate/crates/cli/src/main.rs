mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fieldrec::benchmarks::{Benchmark, Example, Noise};
use fieldrec::diagnostics::{noise_experiment, write_reports_csv, write_table_json, ExperimentConfig};
use fieldrec::domain::{fp_tolerance, subdivide};
use fieldrec::error::Error;
use fieldrec::interp::InterpolationRule;
use fieldrec::numeric::{fmt_f64, linspace};
use fieldrec::pipeline::{fit_map, recover_field, sample_field, FitOptions, Fitter, RecoveryOptions, Solver};
use fieldrec::propagation::PropagationMap;
use fieldrec::schroeder::{self, flow, ConjugationSolution};
use fieldrec::trajectory::{
    build_pairs_resampled, build_pairs_uniform, load_pairs, load_series, write_pairs, write_series, IngestOptions,
    PairSet, Series, TimeSeriesSet,
};

use config::{merge, validate_paths, CliError, Stage};

const DEFAULT_OUTPUT_GRID: usize = 401;

/// Recover the right-hand side of a scalar autonomous ODE from sampled
/// trajectories.
#[derive(Parser)]
#[command(name = "fieldrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate pairs and/or trajectories from a built-in example.
    Simulate(SimulateArgs),
    /// Fit D to data and recover the field v.
    Recover(RecoverArgs),
    /// Evaluate fractional iterates D^t(x0).
    Flow(FlowArgs),
    /// Run the noise-sweep experiment and report error norms.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct SimulateArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// quadratic, cubic or singular.
    #[arg(long)]
    example: Option<Example>,
    /// Parameter a in (0, 1).
    #[arg(long)]
    a: Option<f64>,
    /// Number of pairs, uniform in --range.
    #[arg(long)]
    n: Option<usize>,
    /// Abscissa range of the pairs; defaults depend on the example.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "LO,HI")]
    range: Option<Vec<f64>>,
    /// Noise amplitude.
    #[arg(long)]
    sigma: Option<f64>,
    /// none, additive-interval or relative (additive-interval when sigma > 0).
    #[arg(long)]
    noise: Option<Noise>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pair CSV (x,y); standard output when neither output is given.
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    /// Trajectory CSV (series_id,t,x).
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
    /// Initial values of the trajectories.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    /// Trajectory length (default 10).
    #[arg(long)]
    t_max: Option<f64>,
    /// Sampling step of the trajectories (default 1).
    #[arg(long)]
    t_step: Option<f64>,
}

/// Where `D` comes from: a data file fitted with one of the fitters, or the
/// closed form of a built-in example.
#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct DataArgs {
    /// Pair CSV (x,y).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Trajectory CSV (series_id,t,x).
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Time step of the data.
    #[arg(long)]
    delta_t: Option<f64>,
    /// parametric, rational or spline.
    #[arg(long)]
    fitter: Option<Fitter>,
    /// Family for the parametric fitter (quadratic, cubic or singular).
    #[arg(long)]
    model: Option<Example>,
    /// Initial parameters for the parametric fitter.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    init: Option<Vec<f64>>,
    /// Fit a rational function with this many support points by least
    /// squares (for noisy data).
    #[arg(long)]
    support: Option<usize>,
    /// Use the exact map of a built-in example instead of data.
    #[arg(long)]
    example: Option<Example>,
    /// Parameter of --example.
    #[arg(long)]
    a: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct RecoverArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// product, fixed-point or least-squares.
    #[arg(long)]
    solver: Option<Solver>,
    /// Interpolation between grid nodes: linear, monotone-cubic or
    /// barycentric-rational.
    #[arg(long)]
    rule: Option<InterpolationRule>,
    /// Solver grid points between consecutive fixed points.
    #[arg(long)]
    points_per_piece: Option<usize>,
    /// Stopping tolerance of the solvers.
    #[arg(long)]
    eps: Option<f64>,
    /// Iteration cap of the solvers.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Polynomial degree for least squares.
    #[arg(long)]
    degree: Option<usize>,
    /// Where to recover the field; defaults to the span of the data.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "LO,HI")]
    interval: Option<Vec<f64>>,
    /// Points where D is not differentiable.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    singular: Option<Vec<f64>>,
    /// Also solve Schröder's equation and report its residual.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    schroeder: Option<bool>,
    /// Number of output samples.
    #[arg(long)]
    grid: Option<usize>,
    /// Field CSV (x,v); standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON with the multiplier and any parametric forms.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Diagnostics report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct FlowArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Initial value (required).
    #[arg(long, allow_negative_numbers = true)]
    x0: Option<f64>,
    /// Times, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    t: Option<Vec<f64>>,
    /// Interval subdivided at fixed points; defaults to the span of the data.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "LO,HI")]
    interval: Option<Vec<f64>>,
    /// Grid points for the conjugation.
    #[arg(long)]
    grid: Option<usize>,
    /// CSV (t,x,status); standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Experiment config JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<Example>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    noise: Option<Noise>,
    /// Noise levels, comma separated (may be empty).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sigmas: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Report CSV; standard output by default.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Report JSON, including every replicate.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Recover(args) => recover(args),
        Command::Flow(args) => run_flow(args),
        Command::Diagnose(args) => diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => io::stdout().write_all(bytes).map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

fn bounds(values: Option<Vec<f64>>, flag: &str) -> Result<Option<(f64, f64)>, CliError> {
    match values.as_deref() {
        None => Ok(None),
        Some(&[lo, hi]) if lo < hi => Ok(Some((lo, hi))),
        Some(_) => Err(CliError::Usage(format!("--{flag} takes two increasing values LO,HI"))),
    }
}

fn default_a(example: Example) -> f64 {
    match example {
        Example::Cubic => 0.9,
        Example::Quadratic | Example::Singular => 0.5,
    }
}

fn default_range(example: Example) -> (f64, f64) {
    match example {
        Example::Quadratic => (0.0, 1.9),
        Example::Cubic => (-2.04, 2.04),
        Example::Singular => (-0.495, 1.2),
    }
}

fn default_x0(example: Example) -> Vec<f64> {
    match example {
        Example::Quadratic => vec![0.95],
        Example::Cubic => vec![0.995, 1.005, -0.995, -1.005],
        Example::Singular => vec![1.2],
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let o = merge(&args, args.config.as_deref())?;
    validate_paths(&[], &[&o.pairs_out, &o.trajectory_out])?;
    let example = o.example.unwrap_or(Example::Quadratic);
    let b = Benchmark::new(example, o.a.unwrap_or(default_a(example))).stage("simulate")?;
    let sigma = o.sigma.unwrap_or(0.0);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be non-negative, got {sigma}")));
    }
    let noise = o.noise.unwrap_or(if sigma == 0.0 { Noise::None } else { Noise::AdditiveInterval });
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed.unwrap_or(1));

    let want_trajectories = o.trajectory_out.is_some();
    if o.pairs_out.is_some() || !want_trajectories {
        let (lo, hi) = bounds(o.range, "range")?.unwrap_or(default_range(example));
        let n = o.n.unwrap_or(100);
        let pairs = PairSet::new(b.pairs(&linspace(lo, hi, n), noise, sigma, &mut rng), 1.0).stage("simulate")?;
        let mut buf = Vec::new();
        write_pairs(&pairs, &mut buf).map_err(|source| CliError::Io { path: "<buffer>".into(), source })?;
        emit(o.pairs_out.as_deref(), &buf)?;
    }
    if want_trajectories {
        let (t_max, t_step) = (o.t_max.unwrap_or(10.0), o.t_step.unwrap_or(1.0));
        if !(t_step > 0.0 && t_max >= 0.0) {
            return Err(CliError::Usage("--t-step must be positive and --t-max non-negative".into()));
        }
        let (dom_lo, dom_hi) = b.natural_domain();
        let mut series = Vec::new();
        for (i, x0) in o.x0.unwrap_or_else(|| default_x0(example)).into_iter().enumerate() {
            let mut samples = Vec::new();
            for k in 0..=((t_max / t_step + 1e-9).floor() as usize) {
                let t = k as f64 * t_step;
                let x = b.iterate(x0, t);
                // stop once the solution leaves the domain of D
                if !(x > dom_lo && x < dom_hi) {
                    break;
                }
                samples.push((t, noise.apply(x, sigma, &mut rng)));
            }
            series.push(Series::new(format!("s{}", i + 1), samples).stage("simulate")?);
        }
        let mut buf = Vec::new();
        write_series(&TimeSeriesSet { series }, &mut buf)
            .map_err(|source| CliError::Io { path: "<buffer>".into(), source })?;
        emit(o.trajectory_out.as_deref(), &buf)?;
    }
    Ok(())
}

impl DataArgs {
    fn propagation_map(&self) -> Result<PropagationMap, CliError> {
        let dt = self.delta_t.unwrap_or(1.0);
        let pairs = match (&self.pairs, &self.trajectories, self.example) {
            (Some(p), None, None) => load_pairs(p, dt).stage("loading pairs")?,
            (None, Some(p), None) => {
                let ts = load_series(p, &IngestOptions::default()).stage("loading trajectories")?;
                match build_pairs_uniform(&ts, dt) {
                    Err(Error::NonUniformGrid { .. }) => {
                        build_pairs_resampled(&ts, dt, InterpolationRule::MonotoneCubic).stage("building pairs")?
                    }
                    other => other.stage("building pairs")?,
                }
            }
            (None, None, Some(example)) => {
                let b = Benchmark::new(example, self.a.unwrap_or(default_a(example))).stage("example")?;
                return Ok(b.propagation_map());
            }
            _ => return Err(CliError::Usage("give exactly one of --pairs, --trajectories and --example".into())),
        };
        let model = match self.model {
            Some(m) => {
                let family = Benchmark::new(m, default_a(m)).stage("fit")?.model();
                Some((family, self.init.clone().unwrap_or_else(|| vec![0.5])))
            }
            None => None,
        };
        let opts = FitOptions {
            fitter: self.fitter.unwrap_or_default(),
            model,
            least_squares_support: self.support,
            ..Default::default()
        };
        fit_map(&pairs, &opts).stage("fit")
    }

    fn inputs(&self) -> [&Option<PathBuf>; 2] {
        [&self.pairs, &self.trajectories]
    }
}

#[derive(Serialize)]
struct Coefficients<'a> {
    /// Multiplier per unit time at the base fixed point.
    lambda: f64,
    field: Option<&'a fieldrec::propagation::ParametricForm>,
    map: Option<&'a fieldrec::propagation::ParametricForm>,
}

fn recover(args: RecoverArgs) -> Result<(), CliError> {
    let o = merge(&args, args.config.as_deref())?;
    validate_paths(&o.data.inputs(), &[&o.out, &o.coefficients, &o.report])?;
    let defaults = RecoveryOptions::default();
    let opts = RecoveryOptions {
        solver: o.solver.unwrap_or(defaults.solver),
        rule: o.rule.unwrap_or(defaults.rule),
        points_per_piece: o.points_per_piece.unwrap_or(defaults.points_per_piece),
        eps: o.eps.unwrap_or(defaults.eps),
        max_iter: o.max_iter.unwrap_or(defaults.max_iter),
        degree: o.degree.unwrap_or(defaults.degree),
        interval: bounds(o.interval, "interval")?,
        singular: o.singular.unwrap_or_default(),
        schroeder: o.schroeder.unwrap_or(false),
    };
    let n = o.grid.unwrap_or(DEFAULT_OUTPUT_GRID);
    if n < 2 {
        return Err(CliError::Usage("--grid needs at least 2 points".into()));
    }
    let d = o.data.propagation_map()?;
    let est = recover_field(&d, &opts).stage("recover")?;

    let (lo, hi) = opts.interval.unwrap_or_else(|| d.natural_interval());
    let (h_lo, h_hi) = est.v.hull();
    let mut csv = String::from("x,v\n");
    for (x, v) in sample_field(&est.v, lo.max(h_lo), hi.min(h_hi), n) {
        csv.push_str(&format!("{},{}\n", fmt_f64(x), fmt_f64(v)));
    }
    emit(o.out.as_deref(), csv.as_bytes())?;

    if let Some(path) = &o.coefficients {
        let c = Coefficients { lambda: est.lambda, field: est.parametric_form.as_ref(), map: d.parametric() };
        emit(Some(path), json(&c)?.as_bytes())?;
    }
    if let Some(path) = &o.report {
        emit(Some(path), json(&est.diagnostics)?.as_bytes())?;
    }
    for flag in &est.diagnostics.flags {
        eprintln!("warning: {flag}");
    }
    Ok(())
}

fn json(value: &impl Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| CliError::Usage(e.to_string()))
}

fn run_flow(args: FlowArgs) -> Result<(), CliError> {
    let o = merge(&args, args.config.as_deref())?;
    validate_paths(&o.data.inputs(), &[&o.out])?;
    let x0 = o.x0.ok_or_else(|| CliError::Usage("--x0 is required".into()))?;
    let times = o.t.unwrap_or_else(|| vec![1.0]);
    let d = o.data.propagation_map()?;
    let (lo, hi) = bounds(o.interval, "interval")?.unwrap_or_else(|| d.natural_interval());

    let mut csv = String::from("t,x,status\n");
    if d.fixed_points().iter().any(|fp| (fp.location - x0).abs() <= fp_tolerance(fp.location)) {
        for t in &times {
            csv.push_str(&format!("{},{},ok\n", fmt_f64(*t), fmt_f64(x0)));
        }
        return emit(o.out.as_deref(), csv.as_bytes());
    }
    let pieces = subdivide(&d, lo, hi).stage("flow")?;
    let sub = pieces
        .iter()
        .find(|s| s.contains_open(x0))
        .ok_or_else(|| CliError::Usage(format!("x0 = {x0} lies outside [{lo}, {hi}]")))?;
    let n = o.grid.unwrap_or(schroeder::DEFAULT_GRID);
    let conj = ConjugationSolution::build(&d, sub, n, schroeder::DEFAULT_TOL, schroeder::DEFAULT_MAX_ITER)
        .stage("flow")?;
    for t in times {
        match flow(&d, &conj, x0, t) {
            Ok(x) => csv.push_str(&format!("{},{},ok\n", fmt_f64(t), fmt_f64(x))),
            Err(Error::FlowOutOfRange { .. }) => csv.push_str(&format!("{},,out-of-range\n", fmt_f64(t))),
            Err(e) => return Err(CliError::Core { stage: "flow", source: e }),
        }
    }
    emit(o.out.as_deref(), csv.as_bytes())
}

fn diagnose(args: DiagnoseArgs) -> Result<(), CliError> {
    validate_paths(&[&args.config], &[&args.csv, &args.json])?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.example {
        cfg.example = v;
    }
    if let Some(v) = args.a {
        cfg.a = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.sigmas {
        cfg.sigmas = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.replicates {
        cfg.replicates = v;
    }
    let table = noise_experiment(&cfg).stage("diagnose")?;
    let mut csv = Vec::new();
    write_reports_csv(&table.rows, &mut csv).stage("diagnose")?;
    emit(args.csv.as_deref(), &csv)?;
    if let Some(path) = &args.json {
        let mut buf = Vec::new();
        write_table_json(&table, &mut buf).stage("diagnose")?;
        emit(Some(path), &buf)?;
    }
    Ok(())
}
