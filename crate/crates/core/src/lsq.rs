//! Small dense nonlinear least squares (damped Gauss–Newton /
//! Levenberg–Marquardt) and linear polynomial fitting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Iteration cap for damped Gauss–Newton.
pub const GAUSS_NEWTON_MAX_ITER: usize = 500;

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub params: Vec<f64>,
    /// Euclidean norm of the residual vector at `params`.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Minimize `sum r_i(p)^2` starting from `init`.
///
/// `residuals` returns `None` when the parameters leave the region where the
/// model can be evaluated; such steps are rejected and the damping raised.
/// `jacobian` may be omitted, in which case central differences are used.
pub fn gauss_newton<R, J>(residuals: R, jacobian: Option<J>, init: &[f64]) -> Result<LeastSquaresFit>
where
    R: Fn(&[f64]) -> Option<Vec<f64>>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = init.len();
    let mut p = init.to_vec();
    let mut r = residuals(&p)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Precondition("model not evaluable at the initial parameters".into()))?;
    let m = r.len();
    if m < n {
        return Err(Error::SingularJacobian(format!("{m} residuals for {n} parameters")));
    }
    let jac = |p: &[f64], r0: &[f64]| -> DMatrix<f64> {
        match &jacobian {
            Some(j) => j(p),
            None => fd_jacobian(&residuals, p, r0),
        }
    };
    let mut cost = sq_norm(&r);
    // rank deficiency is left to the damping
    let mut j = jac(&p, &r);
    let mut mu = 1e-3;
    for iter in 0..GAUSS_NEWTON_MAX_ITER {
        if cost == 0.0 {
            return Ok(LeastSquaresFit { params: p, residual_norm: 0.0, iterations: iter });
        }
        let grad = j.transpose() * DVector::from_column_slice(&r);
        let scale: Vec<f64> = (0..n).map(|k| j.column(k).norm().max(1e-300)).collect();
        let mut accepted = false;
        for _ in 0..60 {
            let step = damped_step(&j, &r, &scale, mu)?;
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&trial).filter(|r| r.iter().all(|v| v.is_finite()));
            if let Some(rt) = rt {
                let ct = sq_norm(&rt);
                if ct <= cost {
                    let small_step = step
                        .iter()
                        .zip(&p)
                        .all(|(s, pk)| s.abs() <= 1e-12 * (pk.abs() + 1e-12));
                    let small_gain = cost - ct <= 1e-14 * cost;
                    p = trial;
                    r = rt;
                    cost = ct;
                    mu = (mu * 0.3).max(1e-12);
                    accepted = true;
                    if small_step || small_gain {
                        return Ok(LeastSquaresFit { params: p, residual_norm: cost.sqrt(), iterations: iter + 1 });
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            // no descent possible: a stationary point up to rounding
            if grad.norm() <= 1e-8 * (1.0 + cost.sqrt()) * j.norm() || mu > 1e20 {
                return Ok(LeastSquaresFit { params: p, residual_norm: cost.sqrt(), iterations: iter });
            }
            return Err(Error::NoConvergence { what: "damped Gauss-Newton", cap: GAUSS_NEWTON_MAX_ITER });
        }
        j = jac(&p, &r);
    }
    Err(Error::NoConvergence { what: "damped Gauss-Newton", cap: GAUSS_NEWTON_MAX_ITER })
}

fn sq_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn fd_jacobian<R>(residuals: &R, p: &[f64], r0: &[f64]) -> DMatrix<f64>
where
    R: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let (m, n) = (r0.len(), p.len());
    let mut j = DMatrix::zeros(m, n);
    let mut q = p.to_vec();
    for k in 0..n {
        let h = 1e-6 * p[k].abs().max(1e-2);
        q[k] = p[k] + h;
        let plus = residuals(&q);
        q[k] = p[k] - h;
        let minus = residuals(&q);
        q[k] = p[k];
        match (plus, minus) {
            (Some(a), Some(b)) => {
                for i in 0..m {
                    j[(i, k)] = (a[i] - b[i]) / (2.0 * h);
                }
            }
            (Some(a), None) => {
                for i in 0..m {
                    j[(i, k)] = (a[i] - r0[i]) / h;
                }
            }
            (None, Some(b)) => {
                for i in 0..m {
                    j[(i, k)] = (r0[i] - b[i]) / h;
                }
            }
            (None, None) => {}
        }
    }
    j
}

fn check_rank(j: &DMatrix<f64>) -> Result<()> {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-13 * max {
        return Err(Error::SingularJacobian(format!("singular values span [{min:e}, {max:e}]")));
    }
    Ok(())
}

/// Solve `[J; sqrt(mu)·diag(scale)] step = [-r; 0]` in the least-squares
/// sense.
fn damped_step(j: &DMatrix<f64>, r: &[f64], scale: &[f64], mu: f64) -> Result<Vec<f64>> {
    let (m, n) = j.shape();
    let mut a = DMatrix::zeros(m + n, n);
    a.view_mut((0, 0), (m, n)).copy_from(j);
    for k in 0..n {
        a[(m + k, k)] = mu.sqrt() * scale[k];
    }
    let mut b = DVector::zeros(m + n);
    for i in 0..m {
        b[i] = -r[i];
    }
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-300)
        .map_err(|e| Error::SingularJacobian(e.to_string()))?;
    Ok(x.iter().cloned().collect())
}

/// Linear least squares `min ||A x - b||` by SVD.
pub fn solve_linear(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::SingularJacobian(format!("{m} equations for {n} unknowns")));
    }
    check_rank(&a)?;
    a.svd(true, true).solve(&b, 1e-15).map_err(|e| Error::SingularJacobian(e.to_string()))
}

/// Least-squares polynomial coefficients `c_0 + c_1 x + ... + c_deg x^deg`.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition("xs and ys differ in length".into()));
    }
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, k| xs[i].powi(k as i32));
    let c = solve_linear(a, DVector::from_column_slice(ys))?;
    Ok(c.iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type NoJac = fn(&[f64]) -> DMatrix<f64>;

    #[test]
    fn exponential_decay_recovered() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-0.7 * t).exp()).collect();
        let fit = gauss_newton(
            |p: &[f64]| Some(ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect()),
            None::<NoJac>,
            &[1.0, 0.1],
        )
        .unwrap();
        assert_abs_diff_eq!(fit.params[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.params[1], 0.7, epsilon = 1e-10);
        assert!(fit.residual_norm < 1e-10);
    }

    #[test]
    fn underdetermined_is_singular() {
        let err = gauss_newton(|p: &[f64]| Some(vec![p[0] + p[1]]), None::<NoJac>, &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian(_)));
    }

    #[test]
    fn polynomial_fit_is_exact_on_cubics() {
        let xs: Vec<f64> = (0..30).map(|i| -1.0 + i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 - x + 0.5 * x * x * x).collect();
        let c = fit_polynomial(&xs, &ys, 3).unwrap();
        for (got, want) in c.iter().zip([0.3, -1.0, 0.0, 0.5]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }
}
