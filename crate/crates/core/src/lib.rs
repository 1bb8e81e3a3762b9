//! Scenario-based optimal execution under price and volume uncertainty.
//!
//! A trader must complete an order whose final size `d_T` is only revealed
//! gradually through demand forecasts. Trading follows a proportional
//! strategy `y` with a redistribution matrix `beta` that spreads forecast
//! errors over the remaining periods. [`solver::solve_mean_cvar`]
//! optimizes such a strategy for a mean-CVaR trade-off on simulated
//! scenarios; [`solver::solve_mean_variance`] and [`recourse`] provide the
//! classical mean-variance baseline that re-plans at every update.
//!
//! ```
//! use execrisk::{LiquidityCase, MarketParams, solve_mean_variance};
//!
//! let market = MarketParams::reference(LiquidityCase::Stable);
//! let plan = solve_mean_variance(&market, market.d0, 0.0).unwrap();
//! assert!((plan.y_star[0] - 0.2).abs() < 1e-12);
//! ```

pub mod cost;
pub mod error;
pub mod experiment;
pub mod market;
mod par;
pub mod recourse;
pub mod risk;
pub mod scenario;
pub mod solver;
pub mod strategy;

pub use cost::{batch_costs, cost_mv, cost_proportional, cost_simplified};
pub use error::{ExecError, Result};
pub use market::{LiquidityCase, MarketParams};
pub use recourse::{reproduce_with_static, simulate_recourse, RecourseMode, RecoursePolicy};
pub use risk::{CostDistribution, RiskReport};
pub use scenario::{Scenario, ScenarioRef, ScenarioSet};
pub use solver::{
    evaluate_objective, solve_mean_cvar, solve_mean_variance, MeanCvarSolution,
    MeanVarianceSolution, SolverConfig,
};
pub use strategy::{volume_matrix, volumes, RedistributionMatrix, Strategy, VolumePlan};
