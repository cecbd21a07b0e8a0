//! Closed-form test problems and synthetic data.
//!
//! * `Quadratic`: `v = log(a)·x(1-x)`, `D(x) = ax / (1 - (1-a)x)`.
//! * `Cubic`: `v = log(a)·x(1-x²)`, `D(x) = ax / sqrt(1 + (a²-1)x²)`.
//! * `Singular`: `v = log(a)·(x+½)log(2x+1)`, `D(x) = ((2x+1)^a - 1)/2`,
//!   not differentiable at `x = -½`.
//!
//! In each case `h/h' = g = v / log(a)` and `D^t = h⁻¹(a^t h)`.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ScalarMap;
use crate::propagation::{ParametricModel, PropagationMap};
use crate::trajectory::Series;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    Quadratic,
    Cubic,
    Singular,
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Example::Quadratic),
            "cubic" => Ok(Example::Cubic),
            "singular" => Ok(Example::Singular),
            other => Err(Error::InvalidParameter(format!("unknown example '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub example: Example,
    pub a: f64,
}

fn quad_d(a: f64, x: f64) -> f64 {
    a * x / (1.0 - (1.0 - a) * x)
}

fn quad_dp(a: f64, x: f64) -> f64 {
    let q = 1.0 - (1.0 - a) * x;
    a / (q * q)
}

fn cubic_d(a: f64, x: f64) -> f64 {
    a * x / (1.0 + (a * a - 1.0) * x * x).sqrt()
}

fn cubic_dp(a: f64, x: f64) -> f64 {
    a / (1.0 + (a * a - 1.0) * x * x).powf(1.5)
}

fn sing_d(a: f64, x: f64) -> f64 {
    // (2x+1)^a - 1 without cancellation near the fixed point 0
    (a * (2.0 * x).ln_1p()).exp_m1() / 2.0
}

fn sing_dp(a: f64, x: f64) -> f64 {
    a * (2.0 * x + 1.0).powf(a - 1.0)
}

impl Benchmark {
    pub fn new(example: Example, a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidParameter(format!("a must lie in (0, 1), got {a}")));
        }
        Ok(Benchmark { example, a })
    }

    /// Where the map blows up or stops being defined: `1/(1-a)` for the
    /// quadratic, `1/sqrt(1-a²)` for the cubic, `-½` for the singular case.
    pub fn singular_point(&self) -> f64 {
        let a = self.a;
        match self.example {
            Example::Quadratic => 1.0 / (1.0 - a),
            Example::Cubic => 1.0 / (1.0 - a * a).sqrt(),
            Example::Singular => -0.5,
        }
    }

    /// Interval on which `D` is defined and increasing.
    pub fn natural_domain(&self) -> (f64, f64) {
        let s = self.singular_point();
        match self.example {
            Example::Quadratic => (-s, (1.0 - 1e-3) * s),
            Example::Cubic => (-(1.0 - 1e-3) * s, (1.0 - 1e-3) * s),
            Example::Singular => (-0.5, 10.0),
        }
    }

    pub fn d(&self, x: f64) -> f64 {
        match self.example {
            Example::Quadratic => quad_d(self.a, x),
            Example::Cubic => cubic_d(self.a, x),
            Example::Singular => sing_d(self.a, x),
        }
    }

    pub fn d_prime(&self, x: f64) -> f64 {
        match self.example {
            Example::Quadratic => quad_dp(self.a, x),
            Example::Cubic => cubic_dp(self.a, x),
            Example::Singular => sing_dp(self.a, x),
        }
    }

    /// Schröder function normalized `h(0) = 0`, `h'(0) = 1`.
    pub fn h(&self, x: f64) -> f64 {
        match self.example {
            Example::Quadratic => x / (1.0 - x),
            Example::Cubic => x / (1.0 - x * x).sqrt(),
            Example::Singular => (2.0 * x).ln_1p() / 2.0,
        }
    }

    pub fn h_prime(&self, x: f64) -> f64 {
        match self.example {
            Example::Quadratic => 1.0 / ((1.0 - x) * (1.0 - x)),
            Example::Cubic => (1.0 - x * x).powf(-1.5),
            Example::Singular => 1.0 / (2.0 * x + 1.0),
        }
    }

    /// Julia solution with `g'(0) = 1`.
    pub fn g(&self, x: f64) -> f64 {
        match self.example {
            Example::Quadratic => x * (1.0 - x),
            Example::Cubic => x * (1.0 - x * x),
            Example::Singular => (x + 0.5) * (2.0 * x).ln_1p(),
        }
    }

    pub fn g_prime(&self, x: f64) -> f64 {
        match self.example {
            Example::Quadratic => 1.0 - 2.0 * x,
            Example::Cubic => 1.0 - 3.0 * x * x,
            Example::Singular => (2.0 * x + 1.0).ln() + 1.0,
        }
    }

    /// The velocity field `v = log(a)·g`.
    pub fn v(&self, x: f64) -> f64 {
        self.a.ln() * self.g(x)
    }

    /// The fractional iterate `D^t(x)`, i.e. the flow at time `t`.
    pub fn iterate(&self, x: f64, t: f64) -> f64 {
        let s = self.a.powf(t);
        match self.example {
            Example::Quadratic => {
                let y = s * x / (1.0 - x);
                y / (1.0 + y)
            }
            Example::Cubic => s * x / (1.0 + (s * s - 1.0) * x * x).sqrt(),
            Example::Singular => (s * (2.0 * x).ln_1p()).exp_m1() / 2.0,
        }
    }

    pub fn map(&self) -> ScalarMap {
        let (lo, hi) = self.natural_domain();
        let (b1, b2) = (*self, *self);
        ScalarMap::new(move |x| b1.d(x), lo, hi).with_derivative(move |x| b2.d_prime(x))
    }

    /// The exact map with unit time step.
    pub fn propagation_map(&self) -> PropagationMap {
        PropagationMap::new(self.map(), 1.0)
    }

    pub fn field(&self) -> ScalarMap {
        let (lo, hi) = self.natural_domain();
        let b = *self;
        ScalarMap::new(move |x| b.v(x), lo, hi)
    }

    /// The example's family of maps with `a` as the single parameter.
    pub fn model(&self) -> ParametricModel {
        match self.example {
            Example::Quadratic => ParametricModel::new(
                1,
                "a x / (1 - (1 - a) x)",
                |p, x| quad_d(p[0], x),
                |p, x| quad_dp(p[0], x),
            ),
            Example::Cubic => ParametricModel::new(
                1,
                "a x / sqrt(1 + (a^2 - 1) x^2)",
                |p, x| cubic_d(p[0], x),
                |p, x| cubic_dp(p[0], x),
            ),
            Example::Singular => ParametricModel::new(
                1,
                "((2 x + 1)^a - 1) / 2",
                |p, x| sing_d(p[0], x),
                |p, x| sing_dp(p[0], x),
            ),
        }
    }

    /// Exact samples of the trajectory through `x0` at the given times.
    pub fn trajectory(&self, id: impl Into<String>, x0: f64, times: &[f64]) -> Result<Series> {
        Series::new(id, times.iter().map(|&t| (t, self.iterate(x0, t))).collect())
    }

    /// Pairs `(x, D(x))` perturbed by `noise`.
    pub fn pairs(&self, xs: &[f64], noise: Noise, sigma: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, noise.apply(self.d(x), sigma, rng))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Noise {
    #[default]
    None,
    /// `y + s` with `s ~ U(-σ/2, σ/2)`.
    AdditiveInterval,
    /// `y (1 + s)` with `s ~ U(-σ, σ)`.
    Relative,
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Noise::None),
            "additive-interval" => Ok(Noise::AdditiveInterval),
            "relative" => Ok(Noise::Relative),
            other => Err(Error::InvalidParameter(format!("unknown noise model '{other}'"))),
        }
    }
}

impl Noise {
    pub fn apply(self, y: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
        match self {
            Noise::None => y,
            Noise::AdditiveInterval => y + rng.gen_range(-sigma / 2.0..=sigma / 2.0),
            Noise::Relative => y * (1.0 + rng.gen_range(-sigma..=sigma)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::linspace;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all() -> [Benchmark; 3] {
        [
            Benchmark::new(Example::Quadratic, 0.5).unwrap(),
            Benchmark::new(Example::Cubic, 0.9).unwrap(),
            Benchmark::new(Example::Singular, 0.5).unwrap(),
        ]
    }

    fn probes(b: &Benchmark) -> Vec<f64> {
        match b.example {
            Example::Singular => linspace(-0.45, 1.2, 23),
            _ => linspace(-0.9, 0.9, 23),
        }
    }

    #[test]
    fn closed_forms_satisfy_the_functional_equations() {
        for b in all() {
            for x in probes(&b) {
                let y = b.d(x);
                // Schröder, Julia, and the unit-time flow
                assert_relative_eq!(b.h(y), b.a * b.h(x), epsilon = 1e-13, max_relative = 1e-12);
                assert_relative_eq!(b.g(y), b.d_prime(x) * b.g(x), epsilon = 1e-13, max_relative = 1e-12);
                assert_relative_eq!(b.iterate(x, 1.0), y, epsilon = 1e-14, max_relative = 1e-13);
                assert_relative_eq!(b.g(x), b.h(x) / b.h_prime(x), epsilon = 1e-14, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn field_is_the_time_derivative_of_the_flow() {
        for b in all() {
            for x in probes(&b) {
                let dt = 1e-6;
                let fd = (b.iterate(x, dt) - b.iterate(x, -dt)) / (2.0 * dt);
                assert_relative_eq!(fd, b.v(x), epsilon = 1e-9, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        for b in all() {
            assert_eq!(b.model().check_consistency(&[b.a], &probes(&b)), None);
            for x in probes(&b) {
                let h = 1e-6;
                assert_relative_eq!((b.g(x + h) - b.g(x - h)) / (2.0 * h), b.g_prime(x), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn parameter_range() {
        assert!(Benchmark::new(Example::Quadratic, 1.0).is_err());
        assert!(Benchmark::new(Example::Cubic, 0.0).is_err());
    }

    #[test]
    fn noise_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let add = Noise::AdditiveInterval.apply(2.0, 0.5, &mut rng);
            assert!((add - 2.0).abs() <= 0.25);
            let rel = Noise::Relative.apply(2.0, 0.05, &mut rng);
            assert!((rel / 2.0 - 1.0).abs() <= 0.05);
        }
        assert_eq!(Noise::AdditiveInterval.apply(2.0, 0.0, &mut rng), 2.0);
        assert_eq!(Noise::None.apply(2.0, 10.0, &mut rng), 2.0);
    }
}
