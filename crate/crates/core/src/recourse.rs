//! Mean-variance execution with recourse at every forecast update.
//!
//! Before period `i` the trader knows the forecast `D_i`, re-solves the
//! mean-variance problem over periods `i..m` for the remaining demand
//! `R_i = D_i - (n_0 + ... + n_{i-1})` and trades the first volume of that
//! plan. The last period trades whatever remains.
//!
//! When the fixed cost `eps` is the same in every period the sub-problem
//! solution scales linearly with its demand, so one unit-demand solve per
//! stage covers every path. [`RecourseMode::Resolve`] runs the full
//! per-path re-solve instead and is what the scaled plans are audited
//! against.

use serde::Serialize;

use crate::cost;
use crate::error::{ExecError, Result};
use crate::market::MarketParams;
use crate::par;
use crate::risk::CostDistribution;
use crate::scenario::{ScenarioRef, ScenarioSet};
use crate::solver::solve_mean_variance;
use crate::strategy::{RedistributionMatrix, Strategy, VolumePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecourseMode {
    /// One unit-demand solve per stage, rescaled by the remaining demand.
    ScaledStagePlans,
    /// A fresh solve at every stage of every path.
    Resolve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoursePath {
    pub volumes: VolumePlan,
    pub cost: f64,
}

fn check_inputs(params: &MarketParams, lambda_var: f64) -> Result<()> {
    params.validate()?;
    let report = params.check_convexity();
    if !report.strictly_convex {
        return Err(ExecError::NotConvex(format!(
            "margins eta/tau - gamma/2 = {:?}",
            report.margins
        )));
    }
    if !(lambda_var.is_finite() && lambda_var >= 0.0) {
        return Err(ExecError::InvalidArgument(format!(
            "lambda_var = {lambda_var} must be a nonnegative number"
        )));
    }
    Ok(())
}

fn check_scenario(params: &MarketParams, scenario: ScenarioRef<'_>) -> Result<()> {
    let m = params.periods();
    if scenario.periods() != m || scenario.delta.len() != m {
        return Err(ExecError::DimensionMismatch {
            expected: m,
            actual: scenario.periods(),
        });
    }
    Ok(())
}

/// Audit path: re-solves the remaining problem at every stage.
pub fn simulate_recourse(
    params: &MarketParams,
    lambda_var: f64,
    scenario: ScenarioRef<'_>,
) -> Result<RecoursePath> {
    check_inputs(params, lambda_var)?;
    check_scenario(params, scenario)?;
    let m = params.periods();
    let mut n = Vec::with_capacity(m);
    let mut forecast = params.d0;
    let mut traded = 0.0;
    for i in 0..m {
        let remaining = forecast - traded;
        let ni = if i + 1 == m {
            remaining
        } else {
            solve_mean_variance(&params.tail(i), remaining, lambda_var)?.n_star[0]
        };
        n.push(ni);
        traded += ni;
        forecast += scenario.delta[i];
    }
    let volumes = VolumePlan(n);
    let cost = cost::cost_simplified(params, &volumes, scenario);
    Ok(RecoursePath { volumes, cost })
}

/// Precomputed recourse policy for a fixed market and risk aversion.
#[derive(Debug, Clone)]
pub struct RecoursePolicy {
    params: MarketParams,
    lambda_var: f64,
    mode: RecourseMode,
    /// First-period share of the unit-demand plan at each stage.
    first_share: Vec<f64>,
}

impl RecoursePolicy {
    /// Picks the scaled plans when `eps` is constant, the audit re-solve
    /// otherwise.
    pub fn new(params: &MarketParams, lambda_var: f64) -> Result<Self> {
        let mode = if params.has_constant_epsilon() {
            RecourseMode::ScaledStagePlans
        } else {
            RecourseMode::Resolve
        };
        Self::with_mode(params, lambda_var, mode)
    }

    pub fn with_mode(params: &MarketParams, lambda_var: f64, mode: RecourseMode) -> Result<Self> {
        check_inputs(params, lambda_var)?;
        let m = params.periods();
        let mut first_share = Vec::with_capacity(m);
        if mode == RecourseMode::ScaledStagePlans {
            if !params.has_constant_epsilon() {
                log::warn!("scaled recourse plans assume a constant eps; results are approximate");
            }
            for i in 0..m.saturating_sub(1) {
                first_share.push(solve_mean_variance(&params.tail(i), 1.0, lambda_var)?.n_star[0]);
            }
            first_share.push(1.0);
        }
        Ok(Self {
            params: params.clone(),
            lambda_var,
            mode,
            first_share,
        })
    }

    pub fn mode(&self) -> RecourseMode {
        self.mode
    }

    pub fn lambda_var(&self) -> f64 {
        self.lambda_var
    }

    pub fn simulate(&self, scenario: ScenarioRef<'_>) -> Result<RecoursePath> {
        match self.mode {
            RecourseMode::Resolve => simulate_recourse(&self.params, self.lambda_var, scenario),
            RecourseMode::ScaledStagePlans => {
                check_scenario(&self.params, scenario)?;
                Ok(self.simulate_scaled(scenario))
            }
        }
    }

    fn simulate_scaled(&self, scenario: ScenarioRef<'_>) -> RecoursePath {
        let m = self.params.periods();
        let mut n = Vec::with_capacity(m);
        let mut forecast = self.params.d0;
        let mut traded = 0.0;
        for i in 0..m {
            let remaining = forecast - traded;
            let ni = if i + 1 == m {
                remaining
            } else {
                self.first_share[i] * remaining
            };
            n.push(ni);
            traded += ni;
            forecast += scenario.delta[i];
        }
        let volumes = VolumePlan(n);
        let cost = cost::cost_simplified(&self.params, &volumes, scenario);
        RecoursePath { volumes, cost }
    }

    /// Realized costs on every scenario of `set`, in scenario order.
    pub fn batch_costs(&self, set: &ScenarioSet) -> Result<CostDistribution> {
        if set.is_empty() {
            return Err(ExecError::EmptyDistribution);
        }
        check_scenario(&self.params, set.get(0))?;
        let blocks = par::map_chunks(set.len(), par::CHUNK, |range| {
            range
                .map(|s| self.simulate(set.get(s)).map(|p| p.cost))
                .collect::<Result<Vec<_>>>()
        });
        let mut costs = Vec::with_capacity(set.len());
        for block in blocks {
            costs.extend(block?);
        }
        CostDistribution::new(costs)
    }
}

/// Static strategy and redistribution matrix whose proportional volumes
/// coincide with the recourse volumes on every scenario.
pub fn reproduce_with_static(
    params: &MarketParams,
    lambda_var: f64,
) -> Result<(Strategy, RedistributionMatrix)> {
    check_inputs(params, lambda_var)?;
    if !params.has_constant_epsilon() {
        log::warn!("eps varies across periods; the static reproduction of recourse is not exact");
    }
    let sol = solve_mean_variance(params, params.d0, lambda_var)?;
    if sol.y_star.iter().any(|&v| v <= 0.0) {
        return Err(ExecError::InvalidStrategy(format!(
            "reference strategy {:?} is not strictly positive",
            sol.y_star
        )));
    }
    let y = Strategy::new(sol.y_star)?;
    let beta = RedistributionMatrix::implied(&y)?;
    Ok((y, beta))
}
