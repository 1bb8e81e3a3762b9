//! Optimal execution strategies.

mod mean_cvar;
mod mean_variance;

pub use mean_cvar::{
    evaluate_objective, solve_mean_cvar, solve_problem, DescentMethod, Evaluation, MeanCvarSolution,
    SaaProblem, SolverConfig, SolverDiagnostics, MIN_SCENARIOS,
};
pub use mean_variance::{mean_variance_objective, solve_mean_variance, MeanVarianceSolution};
