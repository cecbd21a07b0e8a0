//! Sampled trajectories and the `(x, D(x))` pairs derived from them.
//!
//! Trajectory CSV: UTF-8, optional header, columns `series_id,t,x` (the id
//! column may be omitted, giving a single series named `default`). Lines
//! starting with `#` are comments. Pair CSV: columns `x,y`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::interp::{Interpolant, InterpolationRule};
use crate::numeric::fmt_f64;

/// Relative tolerance on time spacing and on `delta_t` agreement.
pub const SPACING_RTOL: f64 = 1e-9;
/// Abscissas closer than this fraction of the data width are merged.
pub const DUPLICATE_RTOL: f64 = 1e-12;

pub const DEFAULT_SERIES_ID: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    /// `(t, x)` with `t` strictly increasing.
    pub samples: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(id: impl Into<String>, samples: Vec<(f64, f64)>) -> Result<Self> {
        let s = Series { id: id.into(), samples };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::EmptySeries { id: self.id.clone() });
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::NonMonotoneTime { id: self.id.clone(), index: i + 1 });
            }
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.samples[self.samples.len() - 1].0 - self.samples[0].0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeriesSet {
    pub series: Vec<Series>,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Id given to rows of a two-column file.
    pub default_id: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { default_id: DEFAULT_SERIES_ID.to_string() }
    }
}

pub fn load_series(path: impl AsRef<Path>, options: &IngestOptions) -> Result<TimeSeriesSet> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_series(&text, &path.display().to_string(), options)
}

/// Parse trajectory CSV text; `origin` names the source in error messages.
pub fn parse_series(text: &str, origin: &str, options: &IngestOptions) -> Result<TimeSeriesSet> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let mut first = true;
    for (line, record) in records(text) {
        let parse_err = |msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let (id, t, x) = match record.as_slice() {
            [t, x] => (options.default_id.clone(), t.as_str(), x.as_str()),
            [id, t, x] => (id.clone(), t.as_str(), x.as_str()),
            other => return Err(parse_err(format!("expected 2 or 3 columns, found {}", other.len()))),
        };
        let parsed = (t.parse::<f64>(), x.parse::<f64>());
        let (t, x) = match parsed {
            (Ok(t), Ok(x)) => (t, x),
            _ if first => {
                first = false;
                continue; // header
            }
            _ => return Err(parse_err(format!("cannot parse numbers from '{t}', '{x}'"))),
        };
        first = false;
        if !t.is_finite() || !x.is_finite() {
            return Err(parse_err("non-finite value".into()));
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((t, x));
    }
    let series = order
        .into_iter()
        .map(|id| {
            let samples = rows.remove(&id).unwrap_or_default();
            Series::new(id, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    if series.is_empty() {
        return Err(Error::EmptySeries { id: options.default_id.clone() });
    }
    Ok(TimeSeriesSet { series })
}

/// Non-empty, non-comment CSV records with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<String>)> + '_ {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(line.as_bytes());
        let rec = rdr.records().next()?.ok()?;
        Some((i + 1, rec.iter().map(str::to_string).collect()))
    })
}

pub fn write_series(set: &TimeSeriesSet, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "series_id,t,x")?;
    for s in &set.series {
        for (t, x) in &s.samples {
            writeln!(out, "{},{},{}", s.id, fmt_f64(*t), fmt_f64(*x))?;
        }
    }
    Ok(())
}

/// Samples of the propagation map: `y ≈ D(x)` for time step `delta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pairs: Vec<(f64, f64)>,
    delta_t: f64,
}

impl PairSet {
    /// Sorts by `x` and merges near-duplicate abscissas by averaging `y`.
    pub fn new(mut pairs: Vec<(f64, f64)>, delta_t: f64) -> Result<Self> {
        if !(delta_t > 0.0) {
            return Err(Error::InvalidParameter(format!("delta_t must be positive, got {delta_t}")));
        }
        if let Some(&(x, y)) = pairs.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite pair ({x}, {y})")));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let width = match (pairs.first(), pairs.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        };
        let tol = DUPLICATE_RTOL * width;
        let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            match merged.last_mut() {
                Some(last) if (x - last.0).abs() <= tol => {
                    last.1 += y;
                    last.2 += 1;
                }
                _ => merged.push((x, y, 1)),
            }
        }
        let pairs = merged.into_iter().map(|(x, sy, n)| (x, sy / n as f64)).collect();
        Ok(PairSet { pairs, delta_t })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// `[min x, max x]`.
    pub fn hull(&self) -> (f64, f64) {
        (self.pairs[0].0, self.pairs[self.pairs.len() - 1].0)
    }
}

pub fn load_pairs(path: impl AsRef<Path>, delta_t: f64) -> Result<PairSet> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, &path.display().to_string(), delta_t)
}

pub fn parse_pairs(text: &str, origin: &str, delta_t: f64) -> Result<PairSet> {
    let mut pairs = Vec::new();
    let mut first = true;
    for (line, record) in records(text) {
        let err = |msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let [x, y] = record.as_slice() else {
            return Err(err(format!("expected 2 columns, found {}", record.len())));
        };
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(x), Ok(y)) => pairs.push((x, y)),
            _ if first => {}
            _ => return Err(err(format!("cannot parse numbers from '{x}', '{y}'"))),
        }
        first = false;
    }
    if pairs.is_empty() {
        return Err(Error::Parse { path: origin.to_string(), line: 0, msg: "no pairs".into() });
    }
    PairSet::new(pairs, delta_t)
}

pub fn write_pairs(pairs: &PairSet, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "x,y")?;
    for (x, y) in pairs.pairs() {
        writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*y))?;
    }
    Ok(())
}

fn same_step(a: f64, b: f64) -> bool {
    (a - b).abs() <= SPACING_RTOL * a.abs().max(b.abs())
}

/// Pairs `(x_i, x_{i+1})` from uniformly sampled series.
pub fn build_pairs_uniform(ts: &TimeSeriesSet, delta_t: f64) -> Result<PairSet> {
    let mut pairs = Vec::new();
    for s in &ts.series {
        s.validate()?;
        for w in s.samples.windows(2) {
            let spacing = w[1].0 - w[0].0;
            if !same_step(spacing, delta_t) {
                return Err(Error::NonUniformGrid { id: s.id.clone(), spacing, delta_t });
            }
            pairs.push((w[0].1, w[1].1));
        }
    }
    PairSet::new(pairs, delta_t)
}

/// Pairs `(x_i, x_ap(t_i + delta_t))` where `x_ap` interpolates each series
/// in time.
pub fn build_pairs_resampled(ts: &TimeSeriesSet, delta_t: f64, time_interp: InterpolationRule) -> Result<PairSet> {
    if !(delta_t > 0.0) {
        return Err(Error::InvalidParameter(format!("delta_t must be positive, got {delta_t}")));
    }
    let mut pairs = Vec::new();
    for s in &ts.series {
        s.validate()?;
        let (times, xs): (Vec<f64>, Vec<f64>) = s.samples.iter().cloned().unzip();
        let interp = Interpolant::new(time_interp, times.clone(), xs.clone())?;
        let t_end = times[times.len() - 1];
        let slack = SPACING_RTOL * delta_t;
        for (i, &ti) in times.iter().enumerate() {
            let target = ti + delta_t;
            if target > t_end + slack {
                break;
            }
            // landing on a knot reproduces the sample exactly
            let y = match times[i..].iter().position(|&tk| (tk - target).abs() <= slack) {
                Some(k) => xs[i + k],
                None => interp.eval(target.min(t_end)),
            };
            pairs.push((xs[i], y));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientSpan { delta_t });
    }
    PairSet::new(pairs, delta_t)
}

/// Union of pair sets sharing the same `delta_t`.
pub fn merge_pair_sets(sets: &[PairSet]) -> Result<PairSet> {
    let Some(first) = sets.first() else {
        return Err(Error::Precondition("no pair sets to merge".into()));
    };
    let delta_t = first.delta_t;
    for s in &sets[1..] {
        if !same_step(s.delta_t, delta_t) {
            return Err(Error::MixedDeltaT { a: delta_t, b: s.delta_t });
        }
    }
    let all = sets.iter().flat_map(|s| s.pairs.iter().cloned()).collect();
    PairSet::new(all, delta_t)
}
