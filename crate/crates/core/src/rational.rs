//! Barycentric rational approximation of `D` from pairs.
//!
//! `r(x) = Σ a_k/(x - z_k) / Σ b_k/(x - z_k)`. The greedy (AAA-style) fit
//! interpolates at the support points (`a_k = b_k f_k`); the least-squares
//! fit frees numerator and denominator coefficients so that noisy data are
//! smoothed rather than interpolated.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lsq::gauss_newton;
use crate::numeric::ScalarMap;
use crate::propagation::{from_fitted, PropagationMap};
use crate::trajectory::PairSet;

/// Uniform samples per support gap in the pole scan (data points in the gap
/// are probed as well).
const POLE_SCAN_SAMPLES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricRational {
    support: Vec<f64>,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl BarycentricRational {
    /// `support` must be strictly increasing.
    pub fn new(support: Vec<f64>, num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != num.len() || support.len() != den.len() {
            return Err(Error::Precondition("support, numerator and denominator differ in length".into()));
        }
        if support.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("support points must be strictly increasing".into()));
        }
        Ok(BarycentricRational { support, num, den })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn numerator_weights(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator_weights(&self) -> &[f64] {
        &self.den
    }

    fn nearest(&self, x: f64) -> usize {
        let z = &self.support;
        let i = z.partition_point(|&s| s < x);
        if i == 0 {
            0
        } else if i == z.len() || x - z[i - 1] <= z[i] - x {
            i - 1
        } else {
            i
        }
    }

    /// Numerator and denominator multiplied by `(x - z_j)` for the nearest
    /// support point, with their derivatives; stable at and near `z_j`.
    fn reduced(&self, x: f64) -> (f64, f64, f64, f64) {
        let j = self.nearest(x);
        let zj = self.support[j];
        let dx = x - zj;
        let (mut n, mut q, mut dn, mut dq) = (self.num[j], self.den[j], 0.0, 0.0);
        for k in 0..self.support.len() {
            if k == j {
                continue;
            }
            let c = 1.0 / (x - self.support[k]);
            n += dx * self.num[k] * c;
            q += dx * self.den[k] * c;
            let dc = (zj - self.support[k]) * c * c;
            dn += self.num[k] * dc;
            dq += self.den[k] * dc;
        }
        (n, q, dn, dq)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (n, q, _, _) = self.reduced(x);
        n / q
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (n, q, dn, dq) = self.reduced(x);
        (dn * q - n * dq) / (q * q)
    }

    /// `Q(x)·(x - z_j)(z_{j+1} - x)` on the gap after support point `j`,
    /// finite on the closed gap. `j = None` means left of the first support
    /// point, `j = Some(last)` right of the last one; there the single
    /// adjacent factor is used.
    fn gap_denominator(&self, j: Option<usize>, x: f64) -> f64 {
        let z = &self.support;
        let m = z.len();
        let (skip_a, skip_b) = match j {
            None => (0, usize::MAX),
            Some(j) if j + 1 == m => (j, usize::MAX),
            Some(j) => (j, j + 1),
        };
        let mut rest = 0.0;
        for k in 0..m {
            if k != skip_a && k != skip_b {
                rest += self.den[k] / (x - z[k]);
            }
        }
        match j {
            None => -self.den[0] + (z[0] - x) * rest,
            Some(j) if j + 1 == m => self.den[j] + (x - z[j]) * rest,
            Some(j) => {
                (z[j + 1] - x) * self.den[j] - (x - z[j]) * self.den[j + 1] + (x - z[j]) * (z[j + 1] - x) * rest
            }
        }
    }

    /// A point near a pole of `r` inside `[lo, hi]`, probing uniformly and
    /// at the given extra abscissas.
    pub fn find_pole(&self, lo: f64, hi: f64, probes: &[f64]) -> Option<f64> {
        let z = &self.support;
        let m = z.len();
        if let Some(k) = (0..m).find(|&k| self.den[k] == 0.0 && z[k] >= lo && z[k] <= hi) {
            return Some(z[k]);
        }
        let mut gaps: Vec<(Option<usize>, f64, f64)> = Vec::new();
        if lo < z[0] {
            gaps.push((None, lo, z[0]));
        }
        for j in 0..m - 1 {
            let (a, b) = (z[j].max(lo), z[j + 1].min(hi));
            if a < b {
                gaps.push((Some(j), a, b));
            }
        }
        if hi > z[m - 1] {
            gaps.push((Some(m - 1), z[m - 1], hi));
        }
        for (j, a, b) in gaps {
            let mut xs: Vec<f64> = (0..=POLE_SCAN_SAMPLES)
                .map(|i| a + (b - a) * i as f64 / POLE_SCAN_SAMPLES as f64)
                .chain(probes.iter().cloned().filter(|&p| p > a && p < b))
                .collect();
            xs.sort_by(f64::total_cmp);
            let mut prev: Option<(f64, f64)> = None;
            for x in xs {
                let p = self.gap_denominator(j, x);
                if let Some((xp, pp)) = prev {
                    if pp * p < 0.0 || !p.is_finite() {
                        return Some(0.5 * (xp + x));
                    }
                }
                if p == 0.0 {
                    return Some(x);
                }
                prev = Some((x, p));
            }
        }
        None
    }

    fn into_map(self, lo: f64, hi: f64) -> ScalarMap {
        let r = Arc::new(self);
        let r2 = r.clone();
        ScalarMap::new(move |x| r.eval(x), lo, hi).with_derivative(move |x| r2.derivative(x))
    }
}

/// Greedy barycentric rational fit; interpolates at the chosen support
/// points.
pub fn aaa(xs: &[f64], ys: &[f64], tol: f64, max_support: usize) -> Result<(BarycentricRational, f64)> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(Error::Precondition(format!("rational fitting needs at least 3 pairs, got {n}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let (lo, hi) = (xs[0], xs[n - 1]);
    // keep the Loewner system overdetermined
    let cap = max_support.min(n / 2).max(1);
    let mean = ys.iter().sum::<f64>() / n as f64;
    let mut fitted: Vec<f64> = vec![mean; n];
    let mut in_support = vec![false; n];
    let mut support_idx: Vec<usize> = Vec::new();
    let mut best: Option<(BarycentricRational, f64)> = None;
    let mut last_pole = None;
    while support_idx.len() < cap {
        let next = (0..n)
            .filter(|&i| !in_support[i])
            .max_by(|&a, &b| (ys[a] - fitted[a]).abs().total_cmp(&(ys[b] - fitted[b]).abs()))
            .expect("fewer support points than data");
        in_support[next] = true;
        support_idx.push(next);
        support_idx.sort_unstable();
        let z: Vec<f64> = support_idx.iter().map(|&i| xs[i]).collect();
        let f: Vec<f64> = support_idx.iter().map(|&i| ys[i]).collect();
        let rows: Vec<usize> = (0..n).filter(|&i| !in_support[i]).collect();
        let m = z.len();
        let loewner = DMatrix::from_fn(rows.len(), m, |r, k| {
            let i = rows[r];
            (ys[i] - f[k]) / (xs[i] - z[k])
        });
        let w = smallest_right_singular_vector(loewner)?;
        let num: Vec<f64> = w.iter().zip(&f).map(|(w, f)| w * f).collect();
        let r = BarycentricRational::new(z, num, w)?;
        for i in 0..n {
            fitted[i] = if in_support[i] { ys[i] } else { r.eval(xs[i]) };
        }
        let err = (0..n).map(|i| (ys[i] - fitted[i]).abs()).fold(0.0, f64::max);
        let err = if err.is_finite() { err } else { f64::INFINITY };
        match r.find_pole(lo, hi, xs) {
            Some(p) => last_pole = Some(p),
            None => {
                if best.as_ref().map_or(true, |(_, e)| err < *e) {
                    best = Some((r, err));
                }
                if err <= tol {
                    break;
                }
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Err(Error::SpuriousPole { x: last_pole.unwrap_or(f64::NAN) }),
    }
}

fn smallest_right_singular_vector(a: DMatrix<f64>) -> Result<Vec<f64>> {
    let n = a.ncols();
    // pad to at least square so that V is complete
    let a = if a.nrows() < n { a.resize_vertically(n, 0.0) } else { a };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::SingularJacobian("SVD did not converge".into()))?;
    let k = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap_or(0);
    Ok(v_t.row(k).iter().cloned().collect())
}

/// Greedy barycentric rational fit of `D`, stopping at `tol` (max absolute
/// residual) or `max_support` support points. When the final approximant
/// has a pole in the data hull, the best pole-free smaller one is used.
pub fn fit_rational_barycentric(pairs: &PairSet, tol: f64, max_support: usize) -> Result<PropagationMap> {
    let (r, _) = aaa(&pairs.xs(), &pairs.ys(), tol, max_support)?;
    let (lo, hi) = pairs.hull();
    Ok(from_fitted(r.into_map(lo, hi), pairs))
}

/// Support points at evenly spaced data quantiles (both ends included).
fn quantile_support(xs: &[f64], m: usize) -> Result<Vec<f64>> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..m).map(|k| (k * (n - 1) + (m - 1) / 2) / (m - 1)).collect();
    idx.dedup();
    if idx.len() != m {
        return Err(Error::Precondition("support quantiles coincide".into()));
    }
    Ok(idx.iter().map(|&i| xs[i]).collect())
}

/// `Σ_j c_j Π_{i≠j} (x - z_i)`: numerator or denominator as a polynomial.
fn lagrange_polynomial(z: &[f64], c: &[f64], x: f64) -> f64 {
    (0..z.len())
        .map(|j| c[j] * (0..z.len()).filter(|&i| i != j).map(|i| x - z[i]).product::<f64>())
        .sum()
}

impl BarycentricRational {
    /// The same rational function written on a larger support set.
    fn re_expressed(&self, z: Vec<f64>) -> Result<Self> {
        let mut num = Vec::with_capacity(z.len());
        let mut den = Vec::with_capacity(z.len());
        for k in 0..z.len() {
            let dk: f64 = (0..z.len()).filter(|&i| i != k).map(|i| z[k] - z[i]).product();
            num.push(lagrange_polynomial(&self.support, &self.num, z[k]) / dk);
            den.push(lagrange_polynomial(&self.support, &self.den, z[k]) / dk);
        }
        let scale = den.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if !(scale > 0.0) {
            return Err(Error::SingularJacobian("vanishing denominator".into()));
        }
        BarycentricRational::new(z, num.iter().map(|a| a / scale).collect(), den.iter().map(|b| b / scale).collect())
    }
}

/// Gauss–Newton on `r(x_i) - y_i` over all coefficients but the largest
/// denominator weight, which is pinned to fix the scale. Steps that put a
/// pole inside the data hull are rejected.
fn refine(r: BarycentricRational, xs: &[f64], ys: &[f64]) -> Result<BarycentricRational> {
    let m = r.support.len();
    let pivot = (0..m).max_by(|&i, &j| r.den[i].abs().total_cmp(&r.den[j].abs())).unwrap_or(0);
    let scale = r.den[pivot];
    let z = r.support.clone();
    let unpack = |p: &[f64]| -> BarycentricRational {
        let mut rest = p[m..].iter();
        let den = (0..m).map(|k| if k == pivot { 1.0 } else { *rest.next().unwrap_or(&0.0) }).collect();
        BarycentricRational { support: z.clone(), num: p[..m].to_vec(), den }
    };
    let mut init: Vec<f64> = r.num.iter().map(|a| a / scale).collect();
    init.extend((0..m).filter(|&k| k != pivot).map(|k| r.den[k] / scale));
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let r = unpack(p);
        if r.find_pole(lo, hi, &[]).is_some() {
            return None;
        }
        Some(xs.iter().zip(ys).map(|(&x, &y)| r.eval(x) - y).collect())
    };
    let fit = gauss_newton(&residuals, None::<fn(&[f64]) -> DMatrix<f64>>, &init)?;
    Ok(unpack(&fit.params))
}

/// Least-squares rational fit with up to `n_support` support points at data
/// quantiles. Starts from the linearized two-point fit and grows the
/// support one point at a time, re-expressing the current fit exactly on
/// the new support before refining, so every stage stays pole-free.
pub fn least_squares_rational(xs: &[f64], ys: &[f64], n_support: usize) -> Result<BarycentricRational> {
    let n = xs.len();
    if n_support < 2 {
        return Err(Error::InvalidParameter("at least 2 support points are needed".into()));
    }
    if ys.len() != n || n < 2 * n_support + 1 {
        return Err(Error::Precondition(format!(
            "{n} pairs cannot determine a rational with {n_support} support points"
        )));
    }
    // linearized start: min |N - y Q| (both multiplied by the distance to
    // the nearest support point) over unit coefficient vectors
    let z = quantile_support(xs, 2)?;
    let probe = BarycentricRational::new(z.clone(), vec![0.0; 2], vec![1.0; 2])?;
    let lin = DMatrix::from_fn(n, 4, |i, c| {
        let k = c % 2;
        let j = probe.nearest(xs[i]);
        let w = if k == j { 1.0 } else { (xs[i] - z[j]) / (xs[i] - z[k]) };
        if c < 2 {
            w
        } else {
            -ys[i] * w
        }
    });
    let coef = smallest_right_singular_vector(lin)?;
    let mut r = BarycentricRational::new(z, coef[..2].to_vec(), coef[2..].to_vec())?;
    let (lo, hi) = (xs[0], xs[n - 1]);
    if let Some(x) = r.find_pole(lo, hi, xs) {
        return Err(Error::SpuriousPole { x });
    }
    r = refine(r, xs, ys)?;
    for m in 3..=n_support {
        match refine(r.re_expressed(quantile_support(xs, m)?)?, xs, ys) {
            Ok(next) => r = next,
            // the extra freedom is not identifiable from the data; keep
            // the last stage that converged
            Err(Error::NoConvergence { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    if let Some(x) = r.find_pole(lo, hi, xs) {
        return Err(Error::SpuriousPole { x });
    }
    Ok(r)
}

pub fn fit_rational_least_squares(pairs: &PairSet, n_support: usize) -> Result<PropagationMap> {
    let r = least_squares_rational(&pairs.xs(), &pairs.ys(), n_support)?;
    let (lo, hi) = pairs.hull();
    Ok(from_fitted(r.into_map(lo, hi), pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Benchmark, Example};
    use crate::numeric::{linspace, numeric_derivative};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pairs_of(b: &Benchmark, xs: &[f64]) -> PairSet {
        PairSet::new(xs.iter().map(|&x| (x, b.d(x))).collect(), 1.0).unwrap()
    }

    #[test]
    fn cubic_map_to_two_tenths_of_a_nanounit() {
        let b = Benchmark::new(Example::Cubic, 0.9).unwrap();
        let xs = linspace(0.0025, 0.9975, 200);
        let d = fit_rational_barycentric(&pairs_of(&b, &xs), 1e-10, 60).unwrap();
        let err = linspace(0.0025, 0.9975, 5001).into_iter().map(|x| (d.eval(x) - b.d(x)).abs()).fold(0.0, f64::max);
        assert!(err < 2e-10, "error {err:e}");
    }

    #[test]
    fn rational_maps_are_reproduced() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let xs = linspace(0.0, 1.9, 60);
        let (r, err) = aaa(&xs, &xs.iter().map(|&x| b.d(x)).collect::<Vec<_>>(), 1e-13, 30).unwrap();
        assert!(r.support().len() <= 4);
        assert!(err < 1e-12);
        for x in linspace(0.0, 1.9, 301) {
            assert_abs_diff_eq!(r.eval(x), b.d(x), epsilon = 1e-11);
            assert!((r.derivative(x) - b.d_prime(x)).abs() < 1e-8 * b.d_prime(x));
        }
    }

    #[test]
    fn too_few_pairs() {
        let pairs = PairSet::new(vec![(0.0, 0.0), (1.0, 0.5)], 1.0).unwrap();
        assert!(matches!(fit_rational_barycentric(&pairs, 1e-10, 10), Err(Error::Precondition(_))));
    }

    #[test]
    fn pole_detection() {
        // b = (1, 1): Q = (2x - 1) / (x (x - 1)) vanishes at 1/2
        let r = BarycentricRational::new(vec![0.0, 1.0], vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let p = r.find_pole(0.0, 1.0, &[]).unwrap();
        assert!((p - 0.5).abs() < 0.05, "pole at {p}");
        // alternating weights: Q = -1 / (x (x - 1)) has no zero
        let q = BarycentricRational::new(vec![0.0, 1.0], vec![1.0, 2.0], vec![1.0, -1.0]).unwrap();
        assert_eq!(q.find_pole(0.0, 1.0, &[]), None);
        assert_eq!(q.find_pole(-0.5, 1.5, &[]), None);
        assert_abs_diff_eq!(q.eval(0.0), 1.0);
        assert_abs_diff_eq!(q.eval(1.0), -2.0);
    }

    #[test]
    fn least_squares_mode_smooths_noise() {
        use rand::SeedableRng;
        let b = Benchmark::new(Example::Singular, 0.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs = linspace(-0.45, 1.2, 200);
        let data = b.pairs(&xs, crate::benchmarks::Noise::Relative, 0.05, &mut rng);
        let pairs = PairSet::new(data, 1.0).unwrap();
        let d = fit_rational_least_squares(&pairs, 3).unwrap();
        let err = linspace(-0.45, 1.2, 501).into_iter().map(|x| (d.eval(x) - b.d(x)).abs()).fold(0.0, f64::max);
        assert!(err < 0.02, "error {err:e}");
    }

    #[test]
    fn least_squares_mode_is_exact_on_rational_data() {
        let b = Benchmark::new(Example::Quadratic, 0.5).unwrap();
        let xs = linspace(0.0, 1.5, 40);
        let ys: Vec<f64> = xs.iter().map(|&x| b.d(x)).collect();
        let r = least_squares_rational(&xs, &ys, 3).unwrap();
        for x in linspace(0.0, 1.5, 97) {
            assert_abs_diff_eq!(r.eval(x), b.d(x), epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn derivative_matches_differences(x in 0.01f64..0.98) {
            let b = Benchmark::new(Example::Cubic, 0.9).unwrap();
            let xs = linspace(0.0, 0.99, 120);
            let ys: Vec<f64> = xs.iter().map(|&x| b.d(x)).collect();
            let (r, _) = aaa(&xs, &ys, 1e-12, 40).unwrap();
            prop_assume!(r.support().iter().all(|z| (z - x).abs() > 1e-4));
            let rr = r.clone();
            let map = ScalarMap::new(move |t| rr.eval(t), 0.0, 0.99);
            let fd = numeric_derivative(&map, x).unwrap().value;
            let an = r.derivative(x);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs(), "{} vs {}", fd, an);
        }
    }
}
