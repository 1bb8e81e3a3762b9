//! Closed-form mean-variance execution with a known final demand.
//!
//! With price shocks of mean zero the objective `E[C] + lambda Var[C]` is
//!
//! ```text
//! gamma/2 d^2 + sum eps_i |n_i| + sum c_i n_i^2 + lambda sum tau_i sigma_i^2 (d - a_i)^2
//! ```
//!
//! where `c_i = eta_i/tau_i - gamma/2` and `a_i` is the cumulative volume.
//! Optimal volumes share the sign of `d`, so on that orthant the fixed-cost
//! term is linear and the problem is an equality-constrained QP solved
//! through its KKT system. If the unconstrained KKT point leaves the
//! orthant, a primal active-set loop enforces `sign(d) n_i >= 0`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ExecError, Result};
use crate::market::MarketParams;

/// Volumes below `-NEGATIVE_TOL * |d|` count as leaving the orthant.
const NEGATIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanVarianceSolution {
    pub n_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub objective: f64,
    pub lambda_var: f64,
    /// Lagrange multiplier of `1^T n = d`.
    pub multiplier: f64,
    /// Set when the nonnegativity constraints had to be enforced.
    pub nonnegativity_active: bool,
}

struct Quadratic {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

fn sign_of(d: f64) -> f64 {
    if d < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `f(n) = n^T H n / 2 + b^T n + const` on the orthant of `sign(d)`.
fn build_quadratic(params: &MarketParams, d: f64, lambda_var: f64) -> Quadratic {
    let m = params.periods();
    let c = params.quadratic_coefficients();
    let s = sign_of(d);
    let w: Vec<f64> = (0..m).map(|i| params.tau[i] * params.sigma[i].powi(2)).collect();
    // tail[j] = sum_{i >= j} w_i
    let mut tail = vec![0.0; m + 1];
    for i in (0..m).rev() {
        tail[i] = tail[i + 1] + w[i];
    }
    let hessian = DMatrix::from_fn(m, m, |j, k| {
        let diag = if j == k { 2.0 * c[j] } else { 0.0 };
        diag + 2.0 * lambda_var * tail[j.max(k)]
    });
    let linear = DVector::from_fn(m, |j, _| s * params.epsilon[j] - 2.0 * lambda_var * d * tail[j]);
    let constant = 0.5 * params.gamma * d * d + lambda_var * d * d * tail[0];
    Quadratic {
        hessian,
        linear,
        constant,
    }
}

impl Quadratic {
    fn value(&self, n: &DVector<f64>) -> f64 {
        0.5 * n.dot(&(&self.hessian * n)) + self.linear.dot(n) + self.constant
    }

    fn gradient(&self, n: &DVector<f64>) -> DVector<f64> {
        &self.hessian * n + &self.linear
    }

    /// Minimizes over `1^T n = d` with `n_i = 0` for `i` in `fixed`.
    /// Returns the minimizer and the multiplier `mu` with `grad = mu 1`
    /// on the free coordinates.
    fn solve_equality(&self, d: f64, fixed: &[bool]) -> Result<(DVector<f64>, f64)> {
        let m = fixed.len();
        let free: Vec<usize> = (0..m).filter(|&i| !fixed[i]).collect();
        let k = free.len();
        if k == 0 {
            return Err(ExecError::SingularKkt);
        }
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = self.hessian[(i, j)];
            }
            kkt[(a, k)] = -1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = -self.linear[i];
        }
        rhs[k] = d;
        let sol = kkt.lu().solve(&rhs).ok_or(ExecError::SingularKkt)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(ExecError::SingularKkt);
        }
        let mut n = DVector::zeros(m);
        for (a, &i) in free.iter().enumerate() {
            n[i] = sol[a];
        }
        Ok((n, sol[k]))
    }
}

/// Mean-variance objective with the exact `|n_i|` fixed-cost term.
pub fn mean_variance_objective(params: &MarketParams, n: &[f64], d: f64, lambda_var: f64) -> f64 {
    let c = params.quadratic_coefficients();
    let mut remaining = d;
    let mut total = 0.5 * params.gamma * d * d;
    for i in 0..n.len() {
        remaining -= n[i];
        total += params.epsilon[i] * n[i].abs()
            + c[i] * n[i] * n[i]
            + lambda_var * params.tau[i] * params.sigma[i].powi(2) * remaining * remaining;
    }
    total
}

/// Minimizes `E[C(n)] + lambda_var Var[C(n)]` subject to `1^T n = d`.
pub fn solve_mean_variance(
    params: &MarketParams,
    d: f64,
    lambda_var: f64,
) -> Result<MeanVarianceSolution> {
    params.validate()?;
    let convexity = params.check_convexity();
    if !convexity.strictly_convex {
        return Err(ExecError::NotConvex(format!(
            "margins eta/tau - gamma/2 = {:?}",
            convexity.margins
        )));
    }
    if !(lambda_var.is_finite() && lambda_var >= 0.0) {
        return Err(ExecError::InvalidArgument(format!(
            "lambda_var = {lambda_var} must be a nonnegative number"
        )));
    }
    if !d.is_finite() {
        return Err(ExecError::InvalidArgument("demand must be finite".into()));
    }
    if d == 0.0 {
        let unit = solve_mean_variance(params, 1.0, lambda_var)?;
        return Ok(MeanVarianceSolution {
            n_star: vec![0.0; params.periods()],
            objective: 0.0,
            multiplier: 0.0,
            ..unit
        });
    }

    let m = params.periods();
    let s = sign_of(d);
    let q = build_quadratic(params, d, lambda_var);
    let none = vec![false; m];
    let (mut n, mut mu) = q.solve_equality(d, &none)?;
    let floor = -NEGATIVE_TOL * d.abs();
    let mut active_used = false;
    if n.iter().any(|&v| s * v < floor) {
        active_used = true;
        (n, mu) = active_set(&q, d, s, m)?;
    }
    let objective = q.value(&n);
    Ok(MeanVarianceSolution {
        y_star: n.iter().map(|v| v / d).collect(),
        n_star: n.iter().copied().collect(),
        objective,
        lambda_var,
        multiplier: mu,
        nonnegativity_active: active_used,
    })
}

/// Primal active-set method for `sign(d) n >= 0`, started from the
/// uniform (feasible) split.
fn active_set(q: &Quadratic, d: f64, s: f64, m: usize) -> Result<(DVector<f64>, f64)> {
    let max_passes = 10 * m + 10;
    let mut n = DVector::from_element(m, d / m as f64);
    let mut fixed = vec![false; m];
    let tol = 1e-13 * d.abs();
    for _ in 0..max_passes {
        let (target, mu) = q.solve_equality(d, &fixed)?;
        let step = &target - &n;
        if step.amax() <= tol {
            let grad = q.gradient(&target);
            // Multiplier of the bound on coordinate i (must be >= 0).
            let release = (0..m)
                .filter(|&i| fixed[i])
                .map(|i| (i, s * (grad[i] - mu)))
                .filter(|&(_, kappa)| kappa < -1e-12 * grad.amax().max(1.0))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, _)) => fixed[i] = false,
                None => return Ok((target, mu)),
            }
            n = target;
            continue;
        }
        let mut t = 1.0;
        let mut blocking = None;
        for i in 0..m {
            if !fixed[i] && s * step[i] < 0.0 {
                let ratio = -(s * n[i]) / (s * step[i]);
                if ratio < t {
                    t = ratio;
                    blocking = Some(i);
                }
            }
        }
        n += step * t;
        if let Some(i) = blocking {
            n[i] = 0.0;
            fixed[i] = true;
        }
    }
    Err(ExecError::ActiveSetNonconvergence(max_passes))
}

impl MeanVarianceSolution {
    /// `||grad - mu 1||` over coordinates off their bound, relative to
    /// `||grad||`, for the orthant-restricted objective.
    pub fn kkt_residual(&self, params: &MarketParams, d: f64) -> f64 {
        let q = build_quadratic(params, d, self.lambda_var);
        let n = DVector::from_vec(self.n_star.clone());
        let grad = q.gradient(&n);
        let mut res = 0.0;
        for i in 0..n.len() {
            if !(self.nonnegativity_active && n[i] == 0.0) {
                res += (grad[i] - self.multiplier).powi(2);
            }
        }
        res.sqrt() / grad.norm().max(f64::MIN_POSITIVE)
    }
}
