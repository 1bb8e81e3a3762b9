//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string so the page
//! needs no generated type glue.

use execrisk::experiment::{Experiment, RunConfig};
use execrisk::{
    solve_mean_cvar, solve_mean_variance, LiquidityCase, MarketParams, RedistributionMatrix,
    ScenarioSet, SolverConfig, Strategy,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on simulated paths so a click stays interactive.
pub const MAX_PATHS: usize = 200_000;

const BINS: usize = 60;

#[derive(Serialize)]
struct MeanVarianceView {
    y: Vec<f64>,
    objective: f64,
    nonnegativity_active: bool,
}

#[derive(Serialize)]
struct CvarView {
    y: Vec<f64>,
    mean: f64,
    cvar: f64,
    var: f64,
    std_dev: f64,
    iterations: usize,
    edges: Vec<f64>,
    densities: Vec<f64>,
}

fn market(case: &str) -> Result<MarketParams, String> {
    let case: LiquidityCase = case.parse().map_err(|e: execrisk::ExecError| e.to_string())?;
    Ok(MarketParams::reference(case))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn mean_variance_json(case: &str, lambda_var: f64) -> Result<String, String> {
    let p = market(case)?;
    let sol = solve_mean_variance(&p, p.d0, lambda_var).map_err(|e| e.to_string())?;
    to_json(&MeanVarianceView {
        y: sol.y_star,
        objective: sol.objective,
        nonnegativity_active: sol.nonnegativity_active,
    })
}

/// Optimizes and evaluates on the same `paths` scenarios.
pub fn mean_cvar_json(
    case: &str,
    lambda: f64,
    paths: usize,
    seed: u64,
    volume_uncertainty: bool,
) -> Result<String, String> {
    let err = |e: execrisk::ExecError| e.to_string();
    if paths > MAX_PATHS {
        return Err(format!("at most {MAX_PATHS} paths in the browser"));
    }
    let full = market(case)?;
    let believed = if volume_uncertainty {
        full.clone()
    } else {
        full.without_volume_uncertainty()
    };
    let reference = solve_mean_variance(&full, full.d0, 0.0).map_err(err)?;
    let beta = RedistributionMatrix::implied(&Strategy::new(reference.y_star).map_err(err)?)
        .map_err(err)?;
    let solve_set = ScenarioSet::generate(&believed, paths, seed).map_err(err)?;
    let cfg = SolverConfig::default();
    let sol = solve_mean_cvar(&believed, &solve_set, &beta, lambda, &cfg).map_err(err)?;
    let eval_set = ScenarioSet::generate(&full, paths, seed).map_err(err)?;
    let costs = execrisk::batch_costs(&full, &eval_set, &sol.y_star, &beta).map_err(err)?;
    let tail = costs.tail_stats(full.alpha).map_err(err)?;
    let hist = costs.histogram(BINS).map_err(err)?;
    to_json(&CvarView {
        y: sol.y_star.into_inner(),
        mean: costs.mean(),
        cvar: tail.cvar,
        var: tail.var,
        std_dev: costs.std_dev().map_err(err)?,
        iterations: sol.diagnostics.iterations,
        edges: hist.edges,
        densities: hist.densities,
    })
}

/// Viability of the reference market with scaled impact coefficients.
pub fn viability_json(case: &str, gamma_scale: f64, eta_scale: f64) -> Result<String, String> {
    let mut p = market(case)?;
    p.gamma *= gamma_scale;
    p.eta.iter_mut().for_each(|e| *e *= eta_scale);
    let exp = Experiment::new(RunConfig {
        market: Some(p),
        ..RunConfig::default()
    })
    .map_err(|e| e.to_string())?;
    to_json(&exp.viability())
}

#[wasm_bindgen(js_name = meanVariance)]
pub fn mean_variance(case: &str, lambda_var: f64) -> Result<String, JsError> {
    mean_variance_json(case, lambda_var).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = meanCvar)]
pub fn mean_cvar(
    case: &str,
    lambda: f64,
    paths: u32,
    seed: u32,
    volume_uncertainty: bool,
) -> Result<String, JsError> {
    mean_cvar_json(case, lambda, paths as usize, seed as u64, volume_uncertainty)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn viability(case: &str, gamma_scale: f64, eta_scale: f64) -> Result<String, JsError> {
    viability_json(case, gamma_scale, eta_scale).map_err(|e| JsError::new(&e))
}
