//! Sample-average mean-CVaR execution.
//!
//! The objective over a fixed scenario set is
//!
//! ```text
//! phi(y) = (1 - lambda) mean_s C_s(y) + lambda CVaR_alpha(C_1(y), ..., C_N(y))
//! ```
//!
//! on the hyperplane `1^T y = 1`. The CVaR is taken in its
//! Rockafellar-Uryasev form with the threshold at its closed-form minimizer,
//! so every evaluation returns `phi` together with the optimal `t`. Each
//! scenario is compiled once into its volume matrix `L_s` (`n = L_s y`)
//! and the suffix sums of its price shocks, after which a cost is a short
//! quadratic in `y`.
//!
//! The default search is a quasi-Newton method restricted to the
//! hyperplane with backtracking; when backtracking fails it falls back to a
//! diminishing subgradient step. The best iterate seen is returned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ExecError, Result};
use crate::market::{sign, MarketParams};
use crate::par;
use crate::risk::{check_alpha, tail_split, tail_stats_in_place, RiskReport};
use crate::scenario::ScenarioSet;
use crate::strategy::{apply_packed, fill_volume_matrix, RedistributionMatrix, Strategy};

pub const MIN_SCENARIOS: usize = 100;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Hyperplane-restricted BFGS with subgradient fallback.
    #[default]
    QuasiNewton,
    /// Normalized subgradient steps `initial_step / sqrt(k + 1)`.
    Subgradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative improvement of the best objective required over `patience`
    /// iterations to keep going.
    pub rel_tol: f64,
    pub patience: usize,
    /// Length of the first step (and of fallback steps) in `y` units.
    pub initial_step: f64,
    pub method: DescentMethod,
    /// Extra starts from perturbed uniform strategies.
    pub restarts: usize,
    /// Standard deviation of the restart perturbations.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            rel_tol: 1e-7,
            patience: 50,
            initial_step: 0.1,
            method: DescentMethod::QuasiNewton,
            restarts: 0,
            perturbation: 0.05,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ExecError::InvalidArgument(msg.into()));
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return bad("rel_tol must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if self.max_iters == 0 || self.patience == 0 {
            return bad("max_iters and patience must be at least 1");
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return bad("perturbation must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub final_step_norm: f64,
    /// Best objective after each iteration of the winning start.
    pub history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanCvarSolution {
    pub y_star: Strategy,
    pub t_star: f64,
    pub objective: f64,
    pub lambda: f64,
    pub diagnostics: SolverDiagnostics,
}

/// A scenario set compiled for repeated evaluation of `phi`.
pub struct SaaProblem {
    m: usize,
    n: usize,
    lambda: f64,
    alpha: f64,
    epsilon: Vec<f64>,
    quad: Vec<f64>,
    /// `N x m(m+1)/2` packed volume matrices.
    packed: Vec<f64>,
    /// `N x m` suffix sums `sum_{i >= j} sqrt(tau_i) xi_i`.
    suffix: Vec<f64>,
    /// `d_T P_0 + gamma/2 d_T^2` per scenario.
    constant: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Rockafellar-Uryasev threshold (the empirical VaR).
    pub threshold: f64,
    pub mean: f64,
    pub cvar: f64,
}

impl SaaProblem {
    pub fn new(
        params: &MarketParams,
        scenarios: &ScenarioSet,
        beta: &RedistributionMatrix,
        lambda: f64,
    ) -> Result<Self> {
        params.validate()?;
        let m = params.periods();
        for actual in [scenarios.periods(), beta.periods()] {
            if actual != m {
                return Err(ExecError::DimensionMismatch { expected: m, actual });
            }
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ExecError::InvalidArgument(format!("lambda = {lambda} outside [0, 1]")));
        }
        check_alpha(params.alpha)?;
        if scenarios.len() < MIN_SCENARIOS {
            return Err(ExecError::InvalidArgument(format!(
                "need at least {MIN_SCENARIOS} scenarios, got {}",
                scenarios.len()
            )));
        }
        let tri = m * (m + 1) / 2;
        let n = scenarios.len();
        let sqrt_tau: Vec<f64> = params.tau.iter().map(|t| t.sqrt()).collect();
        let blocks = par::map_chunks(n, par::CHUNK, |range| {
            let len = range.len();
            let mut packed = vec![0.0; len * tri];
            let mut suffix = vec![0.0; len * m];
            let mut constant = vec![0.0; len];
            for (j, s) in range.enumerate() {
                let sc = scenarios.get(s);
                fill_volume_matrix(beta, params.d0, sc.delta, &mut packed[j * tri..(j + 1) * tri]);
                let p = &mut suffix[j * m..(j + 1) * m];
                let mut acc = 0.0;
                for i in (0..m).rev() {
                    acc += sqrt_tau[i] * sc.xi[i];
                    p[i] = acc;
                }
                let d_t = sc.final_demand(params.d0);
                constant[j] = d_t * p[0] + 0.5 * params.gamma * d_t * d_t;
            }
            (packed, suffix, constant)
        });
        let mut packed = Vec::with_capacity(n * tri);
        let mut suffix = Vec::with_capacity(n * m);
        let mut constant = Vec::with_capacity(n);
        for (a, b, c) in blocks {
            packed.extend(a);
            suffix.extend(b);
            constant.extend(c);
        }
        Ok(Self {
            m,
            n,
            lambda,
            alpha: params.alpha,
            epsilon: params.epsilon.clone(),
            quad: params.quadratic_coefficients(),
            packed,
            suffix,
            constant,
        })
    }

    pub fn periods(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn scenario_cost(&self, s: usize, y: &[f64], n: &mut [f64]) -> f64 {
        let tri = self.m * (self.m + 1) / 2;
        apply_packed(&self.packed[s * tri..(s + 1) * tri], y, n);
        let p = &self.suffix[s * self.m..(s + 1) * self.m];
        let mut c = self.constant[s];
        for j in 0..self.m {
            c += -p[j] * n[j] + self.epsilon[j] * n[j].abs() + self.quad[j] * n[j] * n[j];
        }
        c
    }

    /// Scenario costs of `y`, in scenario order.
    pub fn costs(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.m, "strategy length");
        par::map_chunks(self.n, par::CHUNK, |range| {
            let mut n = vec![0.0; self.m];
            range.map(|s| self.scenario_cost(s, y, &mut n)).collect::<Vec<_>>()
        })
        .concat()
    }

    fn summarize(&self, costs: &mut [f64]) -> Evaluation {
        let mean = costs.iter().sum::<f64>() / self.n as f64;
        let tail = tail_stats_in_place(costs, self.alpha);
        Evaluation {
            value: (1.0 - self.lambda) * mean + self.lambda * tail.cvar,
            threshold: tail.var,
            mean,
            cvar: tail.cvar,
        }
    }

    pub fn evaluate(&self, y: &[f64]) -> Evaluation {
        let mut costs = self.costs(y);
        self.summarize(&mut costs)
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.evaluate(y).value
    }

    /// `phi(y)` and one of its subgradients (with respect to unconstrained
    /// `y`). Tied boundary costs share the fractional tail weight.
    pub fn value_and_subgradient(&self, y: &[f64]) -> (Evaluation, Vec<f64>) {
        let costs = self.costs(y);
        let mut scratch = costs.clone();
        let eval = self.summarize(&mut scratch);
        drop(scratch);

        let t = eval.threshold;
        let (_, _, k) = tail_split(self.n, self.alpha);
        let above = costs.iter().filter(|&&c| c > t).count();
        let ties = costs.iter().filter(|&&c| c == t).count();
        let tie_mass = if ties > 0 {
            ((k - above as f64) / ties as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let base = (1.0 - self.lambda) / self.n as f64;
        let tail_w = self.lambda / k;

        let m = self.m;
        let partials = par::map_chunks(self.n, par::CHUNK, |range| {
            let tri = m * (m + 1) / 2;
            let mut grad = vec![0.0; m];
            let mut n = vec![0.0; m];
            for s in range {
                let c = costs[s];
                let w = base
                    + if c > t {
                        tail_w
                    } else if c == t {
                        tail_w * tie_mass
                    } else {
                        0.0
                    };
                if w == 0.0 {
                    continue;
                }
                let l = &self.packed[s * tri..(s + 1) * tri];
                apply_packed(l, y, &mut n);
                let p = &self.suffix[s * m..(s + 1) * m];
                // grad_y += w L^T grad_n
                let mut o = 0;
                for i in 0..m {
                    let gi = w * (-p[i] + self.epsilon[i] * sign(n[i]) + 2.0 * self.quad[i] * n[i]);
                    for r in 0..=i {
                        grad[r] += l[o + r] * gi;
                    }
                    o += i + 1;
                }
            }
            grad
        });
        let mut grad = vec![0.0; m];
        for part in partials {
            for (g, p) in grad.iter_mut().zip(part) {
                *g += p;
            }
        }
        (eval, grad)
    }
}

fn project_direction(g: &[f64]) -> Vec<f64> {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|v| v - mean).collect()
}

fn project_feasible(y: &mut [f64]) {
    let excess = (y.iter().sum::<f64>() - 1.0) / y.len() as f64;
    y.iter_mut().for_each(|v| *v -= excess);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Run {
    y: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    final_step_norm: f64,
    history: Vec<f64>,
    converged: bool,
}

struct Tracker<'a> {
    cfg: &'a SolverConfig,
    best_y: Vec<f64>,
    best: f64,
    history: Vec<f64>,
}

impl Tracker<'_> {
    fn offer(&mut self, y: &[f64], value: f64) {
        if value < self.best {
            self.best = value;
            self.best_y.copy_from_slice(y);
        }
    }

    /// Records the end of an iteration; true once progress has stalled.
    fn stalled(&mut self) -> bool {
        self.history.push(self.best);
        let k = self.history.len();
        let p = self.cfg.patience;
        if k <= p {
            return false;
        }
        let old = self.history[k - 1 - p];
        old - self.best <= self.cfg.rel_tol * self.best.abs()
    }
}

fn run_from(problem: &SaaProblem, start: Vec<f64>, cfg: &SolverConfig) -> Run {
    let m = problem.m;
    let mut y = start;
    project_feasible(&mut y);
    let (eval, g) = problem.value_and_subgradient(&y);
    let mut evaluations = 1;
    let mut f = eval.value;
    let mut pg = project_direction(&g);
    let mut tracker = Tracker {
        cfg,
        best_y: y.clone(),
        best: f,
        history: Vec::new(),
    };
    // Inverse Hessian on the hyperplane; `None` means scaled identity.
    let mut h: Option<Vec<f64>> = None;
    let mut fallbacks = 0usize;
    let mut final_step_norm = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let gnorm = norm(&pg);
        if gnorm == 0.0 {
            tracker.history.push(tracker.best);
            converged = true;
            break;
        }
        let mut accepted = None;
        if cfg.method == DescentMethod::QuasiNewton {
            let mut tries = 0;
            while accepted.is_none() && tries < 2 {
                tries += 1;
                let dir: Vec<f64> = match &h {
                    Some(h) => (0..m).map(|i| -dot(&h[i * m..(i + 1) * m], &pg)).collect(),
                    None => pg.iter().map(|v| -v * cfg.initial_step / gnorm).collect(),
                };
                let slope = dot(&pg, &dir);
                if !(slope < 0.0) {
                    h = None;
                    continue;
                }
                let mut a = 1.0;
                for _ in 0..MAX_BACKTRACKS {
                    let trial: Vec<f64> = y.iter().zip(&dir).map(|(v, d)| v + a * d).collect();
                    let ft = problem.value(&trial);
                    evaluations += 1;
                    if ft <= f + ARMIJO * a * slope {
                        accepted = Some(trial);
                        break;
                    }
                    a *= 0.5;
                }
                if accepted.is_none() {
                    if h.is_none() {
                        break;
                    }
                    h = None;
                }
            }
        }
        let fallback = accepted.is_none();
        let next = accepted.unwrap_or_else(|| {
            let k = if cfg.method == DescentMethod::Subgradient {
                iterations - 1
            } else {
                fallbacks
            };
            fallbacks += 1;
            let a = cfg.initial_step / ((k + 1) as f64).sqrt();
            y.iter().zip(&pg).map(|(v, g)| v - a * g / gnorm).collect()
        });
        let mut next = next;
        project_feasible(&mut next);
        let (eval, g_new) = problem.value_and_subgradient(&next);
        evaluations += 1;
        let pg_new = project_direction(&g_new);
        let s: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
        final_step_norm = norm(&s);
        if cfg.method == DescentMethod::QuasiNewton {
            if fallback {
                h = None;
            } else {
                let dg: Vec<f64> = pg_new.iter().zip(&pg).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &dg);
                if sy > 1e-12 * norm(&s) * norm(&dg) && sy > 0.0 {
                    let base = h.take().unwrap_or_else(|| {
                        let scale = sy / dot(&dg, &dg);
                        let mut id = vec![0.0; m * m];
                        for i in 0..m {
                            for j in 0..m {
                                let p = if i == j { 1.0 } else { 0.0 } - 1.0 / m as f64;
                                id[i * m + j] = scale * p;
                            }
                        }
                        id
                    });
                    h = Some(bfgs_update(&base, &s, &dg, m));
                }
            }
        }
        y = next;
        f = eval.value;
        pg = pg_new;
        tracker.offer(&y, f);
        if tracker.stalled() {
            converged = true;
            break;
        }
    }
    Run {
        y: tracker.best_y,
        value: tracker.best,
        iterations,
        evaluations,
        final_step_norm,
        history: tracker.history,
        converged,
    }
}

/// `H+ = (I - rho s g^T) H (I - rho g s^T) + rho s s^T`.
fn bfgs_update(h: &[f64], s: &[f64], g: &[f64], m: usize) -> Vec<f64> {
    let rho = 1.0 / dot(s, g);
    let hg: Vec<f64> = (0..m).map(|i| dot(&h[i * m..(i + 1) * m], g)).collect();
    let ghg = dot(g, &hg);
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = h[i * m + j] - rho * (s[i] * hg[j] + hg[i] * s[j])
                + (rho * rho * ghg + rho) * s[i] * s[j];
        }
    }
    out
}

/// Minimizes the sample-average mean-CVaR objective over `1^T y = 1`,
/// starting from the uniform strategy.
pub fn solve_mean_cvar(
    params: &MarketParams,
    scenarios: &ScenarioSet,
    beta: &RedistributionMatrix,
    lambda: f64,
    config: &SolverConfig,
) -> Result<MeanCvarSolution> {
    let convexity = params.check_convexity();
    if !convexity.strictly_convex {
        return Err(ExecError::NotConvex(format!(
            "margins eta/tau - gamma/2 = {:?}",
            convexity.margins
        )));
    }
    config.validate()?;
    let problem = SaaProblem::new(params, scenarios, beta, lambda)?;
    solve_problem(&problem, config)
}

/// Same as [`solve_mean_cvar`] on an already compiled problem.
pub fn solve_problem(problem: &SaaProblem, config: &SolverConfig) -> Result<MeanCvarSolution> {
    config.validate()?;
    let m = problem.m;
    let uniform = vec![1.0 / m as f64; m];
    let mut best = run_from(problem, uniform.clone(), config);
    let mut evaluations = best.evaluations;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.restarts {
        let start: Vec<f64> = uniform
            .iter()
            .map(|u| {
                let z: f64 = StandardNormal.sample(&mut rng);
                u + config.perturbation * z
            })
            .collect();
        let run = run_from(problem, start, config);
        evaluations += run.evaluations;
        if run.value < best.value {
            best = run;
        }
    }
    if !best.converged {
        log::warn!(
            "mean-CVaR solve stopped at the iteration budget ({}) before meeting rel_tol",
            config.max_iters
        );
    }
    let eval = problem.evaluate(&best.y);
    if !eval.value.is_finite() {
        return Err(ExecError::NonFiniteSample(0));
    }
    Ok(MeanCvarSolution {
        y_star: Strategy::new(best.y)?,
        t_star: eval.threshold,
        objective: eval.value,
        lambda: problem.lambda,
        diagnostics: SolverDiagnostics {
            iterations: best.iterations,
            evaluations,
            final_step_norm: best.final_step_norm,
            history: best.history,
            converged: best.converged,
        },
    })
}

/// Risk report of `y` on a fixed scenario set, at the market's `alpha`.
pub fn evaluate_objective(
    params: &MarketParams,
    scenarios: &ScenarioSet,
    beta: &RedistributionMatrix,
    y: &Strategy,
    lambda: f64,
) -> Result<RiskReport> {
    crate::cost::batch_costs(params, scenarios, y, beta)?.risk_report(params.alpha, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::batch_costs;
    use crate::market::LiquidityCase;
    use approx::assert_relative_eq;

    fn set(params: &MarketParams, n: usize, seed: u64) -> ScenarioSet {
        ScenarioSet::generate(params, n, seed).unwrap()
    }

    #[test]
    fn compiled_costs_match_batch_evaluator() {
        let p = MarketParams::reference(LiquidityCase::DryingUp);
        let s = set(&p, 500, 3);
        let beta = RedistributionMatrix::uniform(5);
        let y = Strategy::new(vec![0.5, 0.3, 0.1, 0.2, -0.1]).unwrap();
        let prob = SaaProblem::new(&p, &s, &beta, 0.5).unwrap();
        let fast = prob.costs(y.as_slice());
        let slow = batch_costs(&p, &s, &y, &beta).unwrap();
        for (a, b) in fast.iter().zip(slow.samples()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-9, epsilon = 1e-3);
        }
        let report = slow.risk_report(p.alpha, 0.5).unwrap();
        assert_relative_eq!(prob.value(y.as_slice()), report.phi_lambda, max_relative = 1e-9);
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let p = MarketParams::reference(LiquidityCase::Stable);
        let s = set(&p, 400, 9);
        let beta = RedistributionMatrix::uniform(5);
        let prob = SaaProblem::new(&p, &s, &beta, 0.0).unwrap();
        let y = [0.3, 0.25, 0.2, 0.15, 0.1];
        let (_, g) = prob.value_and_subgradient(&y);
        let h = 1e-6;
        for i in 0..5 {
            let mut up = y;
            let mut dn = y;
            up[i] += h;
            dn[i] -= h;
            let fd = (prob.value(&up) - prob.value(&dn)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn deterministic_market_gives_uniform() {
        let p = MarketParams::reference(LiquidityCase::Stable)
            .without_volume_uncertainty()
            .without_price_uncertainty();
        let s = set(&p, 100, 1);
        let beta = RedistributionMatrix::uniform(5);
        for lambda in [0.0, 0.5, 1.0] {
            let sol = solve_mean_cvar(&p, &s, &beta, lambda, &SolverConfig::default()).unwrap();
            for y in sol.y_star.as_slice() {
                assert!((y - 0.2).abs() < 1e-6, "{lambda}: {:?}", sol.y_star);
            }
        }
    }

    #[test]
    fn history_is_nonincreasing_and_solve_is_reproducible() {
        let p = MarketParams::reference(LiquidityCase::DryingUp);
        let s = set(&p, 2000, 4);
        let beta = RedistributionMatrix::uniform(5);
        let cfg = SolverConfig {
            restarts: 1,
            ..SolverConfig::default()
        };
        let a = solve_mean_cvar(&p, &s, &beta, 0.5, &cfg).unwrap();
        let b = solve_mean_cvar(&p, &s, &beta, 0.5, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.diagnostics.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.objective.is_finite());
    }

    #[test]
    fn preconditions() {
        let p = MarketParams::reference(LiquidityCase::Stable);
        let beta = RedistributionMatrix::uniform(5);
        let small = set(&p, 50, 0);
        let cfg = SolverConfig::default();
        assert!(solve_mean_cvar(&p, &small, &beta, 0.5, &cfg).is_err());
        let s = set(&p, 100, 0);
        assert!(solve_mean_cvar(&p, &s, &beta, 1.5, &cfg).is_err());
        let bad = SolverConfig {
            rel_tol: 0.0,
            ..cfg
        };
        assert!(solve_mean_cvar(&p, &s, &beta, 0.5, &bad).is_err());
    }
}
