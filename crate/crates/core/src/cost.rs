//! Liquidation cost of a strategy under one scenario.
//!
//! Three evaluators are provided. [`cost_mv`] is the definitional cost of
//! a volume plan against a known final demand, [`cost_proportional`] is the
//! same definition with volumes produced by a proportional strategy, and
//! [`cost_simplified`] is the algebraically reduced form
//!
//! ```text
//! sum_i sqrt(tau_i) xi_i (d_T - a_i) + gamma/2 d_T^2
//!     + sum_i eps_i |n_i| + sum_i (eta_i/tau_i - gamma/2) n_i^2
//! ```
//!
//! with `a_i` the cumulative volume. The reduced form is the hot path; the
//! other two serve as oracles.

use std::io::Write;

use crate::error::{ExecError, Result};
use crate::market::MarketParams;
use crate::par;
use crate::risk::CostDistribution;
use crate::scenario::{ScenarioRef, ScenarioSet};
use crate::strategy::{volumes, RedistributionMatrix, Strategy, VolumePlan};

const VOLUME_MATCH_TOL: f64 = 1e-6;

/// Realized cost of one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSample {
    pub value: f64,
    pub scenario: usize,
}

fn definitional_cost(params: &MarketParams, n: &[f64], d_t: f64, xi: &[f64]) -> f64 {
    let mut remaining = d_t;
    let mut total = 0.0;
    for i in 0..n.len() {
        let rate = n[i] / params.tau[i];
        remaining -= n[i];
        let price_move = params.tau[i].sqrt() * xi[i] + params.tau[i] * params.permanent_impact(rate);
        let temporary = params.epsilon[i] * crate::market::sign(rate) + params.eta[i] * rate;
        total += price_move * remaining + n[i] * temporary;
    }
    total
}

fn check_len(params: &MarketParams, len: usize) -> Result<()> {
    let m = params.periods();
    if len != m {
        return Err(ExecError::DimensionMismatch { expected: m, actual: len });
    }
    Ok(())
}

/// Cost of trading `n` when the final demand `d_t` is known upfront; the
/// forecast updates of `scenario` are ignored.
pub fn cost_mv(
    params: &MarketParams,
    n: &VolumePlan,
    d_t: f64,
    scenario: ScenarioRef<'_>,
) -> Result<f64> {
    check_len(params, n.0.len())?;
    check_len(params, scenario.periods())?;
    let traded = n.total();
    let scale = n.0.iter().map(|v| v.abs()).sum::<f64>().max(d_t.abs());
    if (traded - d_t).abs() > VOLUME_MATCH_TOL * scale {
        return Err(ExecError::VolumeMismatch { traded, demand: d_t });
    }
    Ok(definitional_cost(params, &n.0, d_t, scenario.xi))
}

/// Definitional cost of a proportional strategy with redistribution `beta`.
pub fn cost_proportional(
    params: &MarketParams,
    y: &Strategy,
    beta: &RedistributionMatrix,
    scenario: ScenarioRef<'_>,
) -> Result<f64> {
    check_len(params, y.periods())?;
    let n = volumes(y, beta, params.d0, scenario)?;
    let d_t = scenario.final_demand(params.d0);
    Ok(definitional_cost(params, &n.0, d_t, scenario.xi))
}

/// Reduced cost form with `d_T = D0 + sum(delta)`.
pub fn cost_simplified(params: &MarketParams, n: &VolumePlan, scenario: ScenarioRef<'_>) -> f64 {
    simplified(params, &n.0, scenario.final_demand(params.d0), scenario.xi)
}

pub(crate) fn simplified(params: &MarketParams, n: &[f64], d_t: f64, xi: &[f64]) -> f64 {
    let half_gamma = 0.5 * params.gamma;
    let mut remaining = d_t;
    let mut total = half_gamma * d_t * d_t;
    for i in 0..n.len() {
        remaining -= n[i];
        total += params.tau[i].sqrt() * xi[i] * remaining
            + params.epsilon[i] * n[i].abs()
            + (params.eta[i] / params.tau[i] - half_gamma) * n[i] * n[i];
    }
    total
}

/// Costs of `(y, beta)` on every scenario of `set`, in scenario order.
pub fn batch_costs(
    params: &MarketParams,
    set: &ScenarioSet,
    y: &Strategy,
    beta: &RedistributionMatrix,
) -> Result<CostDistribution> {
    check_len(params, set.periods())?;
    // Validate dimensions once up front.
    volumes(y, beta, params.d0, set.get(0))?;
    let blocks = par::map_chunks(set.len(), par::CHUNK, |range| {
        range
            .map(|s| {
                let sc = set.get(s);
                let n = volumes(y, beta, params.d0, sc).expect("dimensions checked");
                simplified(params, &n.0, sc.final_demand(params.d0), sc.xi)
            })
            .collect::<Vec<_>>()
    });
    CostDistribution::new(blocks.concat())
}

/// Streams costs as `scenario,cost` CSV rows.
pub fn write_costs_csv<W: Write>(mut out: W, costs: &[f64]) -> Result<()> {
    writeln!(out, "scenario,cost")?;
    for (i, c) in costs.iter().enumerate() {
        writeln!(out, "{i},{c}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::LiquidityCase;
    use crate::scenario::Scenario;
    use approx::assert_relative_eq;

    fn case_a() -> MarketParams {
        MarketParams::reference(LiquidityCase::Stable)
    }

    #[test]
    fn frictionless_zero_shock_costs_nothing() {
        let p = MarketParams {
            epsilon: vec![0.0; 5],
            eta: vec![1e-300; 5],
            gamma: 0.0,
            ..case_a()
        };
        let n = VolumePlan(vec![2e5; 5]);
        let c = cost_mv(&p, &n, 1e6, Scenario::zero(5).as_ref()).unwrap();
        assert!(c.abs() < 1e-200);
    }

    #[test]
    fn single_period_cost() {
        let p = MarketParams::reference_with_periods(LiquidityCase::Stable, 1);
        let d = 1e6;
        let expected = p.epsilon[0] * d + p.eta[0] * d * d / p.tau[0];
        let s = Scenario::price_only(vec![0.7]);
        let c = cost_mv(&p, &VolumePlan(vec![d]), d, s.as_ref()).unwrap();
        assert_relative_eq!(c, expected, max_relative = 1e-14);
        let c = cost_simplified(&p, &VolumePlan(vec![d]), Scenario::zero(1).as_ref());
        assert_relative_eq!(c, expected, max_relative = 1e-12);
    }

    #[test]
    fn volume_mismatch_is_rejected() {
        let p = case_a();
        let n = VolumePlan(vec![2e5; 5]);
        assert!(matches!(
            cost_mv(&p, &n, 1.1e6, Scenario::zero(5).as_ref()),
            Err(ExecError::VolumeMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_quadratic_cost() {
        let p = MarketParams {
            gamma: 0.0,
            epsilon: vec![0.0; 5],
            ..case_a()
        };
        let y = Strategy::new(vec![0.3, 0.25, 0.2, 0.15, 0.1]).unwrap();
        let beta = RedistributionMatrix::uniform(5);
        let s = Scenario::zero(5);
        let c = cost_proportional(&p, &y, &beta, s.as_ref()).unwrap();
        let expected: f64 = y
            .as_slice()
            .iter()
            .zip(&p.eta)
            .map(|(yi, eta)| eta * (yi * p.d0).powi(2))
            .sum();
        assert_relative_eq!(c, expected, max_relative = 1e-12);
    }

    #[test]
    fn proportional_matches_mv_without_updates() {
        let p = case_a();
        let y = Strategy::new(vec![0.4, 0.3, 0.1, 0.15, 0.05]).unwrap();
        let beta = RedistributionMatrix::uniform(5);
        let s = Scenario::price_only(vec![0.3, -1.2, 0.5, 2.0, -0.1]);
        let n = VolumePlan(y.as_slice().iter().map(|v| v * p.d0).collect());
        let a = cost_proportional(&p, &y, &beta, s.as_ref()).unwrap();
        let b = cost_mv(&p, &n, p.d0, s.as_ref()).unwrap();
        let c = cost_simplified(&p, &n, s.as_ref());
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert_relative_eq!(a, c, max_relative = 1e-9);
    }

    #[test]
    fn nothing_traded_nothing_paid() {
        let p = case_a();
        let s = Scenario::new(vec![1.0; 5], vec![-1e6, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(cost_simplified(&p, &VolumePlan(vec![0.0; 5]), s.as_ref()), 0.0);
    }

    #[test]
    fn csv_sink() {
        let mut buf = Vec::new();
        write_costs_csv(&mut buf, &[1.5, 2.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "scenario,cost\n0,1.5\n1,2\n");
    }
}
