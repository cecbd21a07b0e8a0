//! Scalar maps and the low-level numerics shared by every stage of the
//! pipeline: bracketed root finding, monotone inversion and finite
//! differences.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Iteration cap for the bracketed root finder.
pub const ROOT_MAX_ITER: usize = 200;

/// Number of samples used when checking that a map is monotone.
const MONOTONE_PROBES: usize = 64;

pub type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A real function on a closed interval, optionally with an analytic
/// derivative. Without one, derivatives fall back to central differences.
#[derive(Clone)]
pub struct ScalarMap {
    eval: Func,
    deriv: Option<Func>,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarMap")
            .field("domain", &(self.lo, self.hi))
            .field("analytic_derivative", &self.deriv.is_some())
            .finish()
    }
}

impl ScalarMap {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty domain [{lo}, {hi}]");
        ScalarMap { eval: Arc::new(f), deriv: None, lo, hi }
    }

    pub fn with_derivative(mut self, d: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.deriv = Some(Arc::new(d));
        self
    }

    pub fn identity(lo: f64, hi: f64) -> Self {
        ScalarMap::new(|x| x, lo, hi).with_derivative(|_| 1.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn has_derivative(&self) -> bool {
        self.deriv.is_some()
    }

    /// Analytic derivative if present, otherwise a finite difference
    /// (one-sided near the domain boundary).
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(x),
            None => numeric_derivative(self, x).map(|d| d.value).unwrap_or(f64::NAN),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Same function on a different domain.
    pub fn restricted(&self, lo: f64, hi: f64) -> Self {
        ScalarMap { eval: self.eval.clone(), deriv: self.deriv.clone(), lo, hi }
    }
}

/// An interval known to enclose a sign change of some function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Bracket {
    pub fn new(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<Self> {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let b = Bracket { lo, hi, f_lo: f(lo), f_hi: f(hi) };
        if !b.is_valid() {
            return Err(Error::InvalidBracket { lo, hi, f_lo: b.f_lo, f_hi: b.f_hi });
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        self.f_lo.is_finite() && self.f_hi.is_finite() && self.f_lo * self.f_hi <= 0.0
    }
}

/// Finite-difference step used throughout the crate.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    f64::max(1e-6, 1e-7 * x.abs())
}

/// Root of `f` on `map`'s domain, see [`brent`].
pub fn find_root(f: &ScalarMap, bracket: Bracket, tol: f64) -> Result<f64> {
    brent(|x| f.eval(x), bracket, tol)
}

/// Brent's method: inverse quadratic interpolation and secant steps,
/// falling back to bisection whenever they would leave the bracket or
/// converge too slowly. Stops once `|f(x)| <= tol` or the bracket is
/// narrower than `tol`.
pub fn brent(f: impl Fn(f64) -> f64, bracket: Bracket, tol: f64) -> Result<f64> {
    if !bracket.is_valid() {
        return Err(Error::InvalidBracket {
            lo: bracket.lo,
            hi: bracket.hi,
            f_lo: bracket.f_lo,
            f_hi: bracket.f_hi,
        });
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("root tolerance must be positive, got {tol}")));
    }
    let (mut a, mut b) = (bracket.lo, bracket.hi);
    let (mut fa, mut fb) = (bracket.f_lo, bracket.f_hi);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let (mut c, mut fc) = (b, fb);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..ROOT_MAX_ITER {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if fb.abs() <= tol || xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::InvalidBracket { lo: a, hi: b, f_lo: fa, f_hi: fb });
        }
    }
    Err(Error::MaxIterExceeded { what: "root finder", cap: ROOT_MAX_ITER })
}

/// Solve `f(x) = y` for a strictly monotone `f` on its domain.
pub fn invert_monotone(f: &ScalarMap, y: f64, tol: f64) -> Result<f64> {
    let (lo, hi) = f.domain();
    check_monotone(f)?;
    let (f_lo, f_hi) = (f.eval(lo), f.eval(hi));
    let (range_lo, range_hi) = (f_lo.min(f_hi), f_lo.max(f_hi));
    if !(y >= range_lo - tol && y <= range_hi + tol) {
        return Err(Error::OutOfRange { y, lo: range_lo, hi: range_hi });
    }
    let y = y.clamp(range_lo, range_hi);
    invert_on(|x| f.eval(x), y, lo, hi, tol)
}

/// Inversion without the sampled monotonicity check; the caller guarantees
/// that `f - y` changes sign on `[lo, hi]`.
pub(crate) fn invert_on(f: impl Fn(f64) -> f64, y: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let g = |x: f64| f(x) - y;
    let bracket = Bracket::new(&g, lo, hi)?;
    brent(g, bracket, tol)
}

fn check_monotone(f: &ScalarMap) -> Result<()> {
    let (lo, hi) = f.domain();
    if lo == hi {
        return Ok(());
    }
    let mut sign = 0.0;
    let mut prev = f.eval(lo);
    for i in 1..=MONOTONE_PROBES {
        let x = lo + (hi - lo) * i as f64 / MONOTONE_PROBES as f64;
        let cur = f.eval(x);
        let step = cur - prev;
        if !(step != 0.0) || (sign != 0.0 && step.signum() != sign) {
            return Err(Error::NotMonotone { x });
        }
        sign = step.signum();
        prev = cur;
    }
    Ok(())
}

/// Result of a finite-difference derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub value: f64,
    /// True when the point was too close to the boundary for a central
    /// difference and a one-sided one was used instead.
    pub one_sided: bool,
}

/// Central difference `(f(x+h) - f(x-h)) / 2h` with `h = fd_step(x)`.
pub fn numeric_derivative(f: &ScalarMap, x: f64) -> Result<Derivative> {
    let h = fd_step(x);
    let (lo, hi) = f.domain();
    if x - h >= lo && x + h <= hi {
        let value = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
        return Ok(Derivative { value, one_sided: false });
    }
    // second-order one-sided stencils
    if x + 2.0 * h <= hi && x >= lo {
        let value = (-3.0 * f.eval(x) + 4.0 * f.eval(x + h) - f.eval(x + 2.0 * h)) / (2.0 * h);
        return Ok(Derivative { value, one_sided: true });
    }
    if x - 2.0 * h >= lo && x <= hi {
        let value = (3.0 * f.eval(x) - 4.0 * f.eval(x - h) + f.eval(x - 2.0 * h)) / (2.0 * h);
        return Ok(Derivative { value, one_sided: true });
    }
    Err(Error::DomainMargin { x })
}

/// Second derivative by a central difference on the first derivative,
/// step `sqrt(fd_step(x))`.
pub fn second_derivative(f: &ScalarMap, x: f64) -> Result<f64> {
    let h = fd_step(x).sqrt();
    let (lo, hi) = f.domain();
    if f.has_derivative() {
        if x - h >= lo && x + h <= hi {
            return Ok((f.derivative(x + h) - f.derivative(x - h)) / (2.0 * h));
        }
        if x + 2.0 * h <= hi && x >= lo {
            return Ok((-3.0 * f.derivative(x) + 4.0 * f.derivative(x + h) - f.derivative(x + 2.0 * h))
                / (2.0 * h));
        }
        if x - 2.0 * h >= lo && x <= hi {
            return Ok((3.0 * f.derivative(x) - 4.0 * f.derivative(x - h) + f.derivative(x - 2.0 * h))
                / (2.0 * h));
        }
        return Err(Error::DomainMargin { x });
    }
    if x - h >= lo && x + h <= hi {
        return Ok((f.eval(x + h) - 2.0 * f.eval(x) + f.eval(x - h)) / (h * h));
    }
    if x + 3.0 * h <= hi && x >= lo {
        return Ok((2.0 * f.eval(x) - 5.0 * f.eval(x + h) + 4.0 * f.eval(x + 2.0 * h) - f.eval(x + 3.0 * h))
            / (h * h));
    }
    if x - 3.0 * h >= lo && x <= hi {
        return Ok((2.0 * f.eval(x) - 5.0 * f.eval(x - h) + 4.0 * f.eval(x - 2.0 * h) - f.eval(x - 3.0 * h))
            / (h * h));
    }
    Err(Error::DomainMargin { x })
}

/// Shortest round-trip text for `x`, in exponent form when it is very small
/// or very large.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// `n` equally spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Max of `|v|` over a slice (0 for an empty slice).
pub fn sup_norm(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}
