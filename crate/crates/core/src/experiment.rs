//! Run configuration and the reproducible experiments built on it.
//!
//! A run is described by one JSON document:
//!
//! ```json
//! {
//!   "market": { ... },
//!   "scenarios": { "paths": 100000, "seed": 1, "eval_paths": 1000000, "eval_seed": 2 },
//!   "solver": { "max_iters": 20000, "rel_tol": 1e-7 },
//!   "run": { "case": "a", "lambdas": [0, 0.25, 0.5, 0.75, 1], "alpha": 0.3 }
//! }
//! ```
//!
//! Every section is optional. Without `market` the reference market of
//! `run.case` is used. Strategies are optimized on the `paths` set and
//! reported on the independent `eval_paths` set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ExecError, Result};
use crate::market::{ConvexityReport, LiquidityCase, MarketParams, ViabilityMatrixReport};
use crate::recourse::RecoursePolicy;
use crate::risk::{
    default_sd1_tolerance, pooled_grid, sd1_dominates, uniform_grid, CostDistribution,
    DominanceResult, RiskReport,
};
use crate::scenario::ScenarioSet;
use crate::solver::{
    solve_mean_cvar, solve_mean_variance, MeanCvarSolution, MeanVarianceSolution, SaaProblem,
    SolverConfig,
};
use crate::strategy::{RedistributionMatrix, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub paths: usize,
    pub seed: u64,
    pub eval_paths: usize,
    pub eval_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            paths: 200_000,
            seed: 1,
            eval_paths: 1_000_000,
            eval_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub case: LiquidityCase,
    pub lambdas: Vec<f64>,
    pub lambda_vars: Vec<f64>,
    /// Overrides the market's CVaR level.
    pub alpha: Option<f64>,
    /// Mean-CVaR side of the distribution comparison.
    pub compare_lambda: f64,
    /// Mean-variance (with recourse) side of the comparison.
    pub compare_lambda_var: f64,
    pub bins: usize,
    pub cdf_points: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            case: LiquidityCase::Stable,
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            lambda_vars: vec![0.0, 1e-7, 1e-6, 1e-5, 1e-4],
            alpha: None,
            compare_lambda: 1.0,
            compare_lambda_var: 1e-4,
            bins: 200,
            cdf_points: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub market: Option<MarketParams>,
    pub scenarios: ScenarioConfig,
    pub solver: SolverConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Market of the run: the explicit section or the case preset, with
    /// the `alpha` override applied.
    pub fn market(&self) -> Result<MarketParams> {
        let mut market = self
            .market
            .clone()
            .unwrap_or_else(|| MarketParams::reference(self.run.case));
        if let Some(alpha) = self.run.alpha {
            market.alpha = alpha;
        }
        market.validate()?;
        Ok(market)
    }
}

/// Which results table to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TableKind {
    /// Mean-CVaR strategies optimized as if the demand were known.
    PriceOnly,
    /// Mean-CVaR strategies optimized under price and volume uncertainty.
    Joint,
    /// Mean-variance with recourse.
    Recourse,
}

impl std::str::FromStr for TableKind {
    type Err = ExecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2a" => Ok(TableKind::PriceOnly),
            "2b" => Ok(TableKind::Joint),
            "3" => Ok(TableKind::Recourse),
            other => Err(ExecError::InvalidArgument(format!(
                "unknown table {other:?}, expected 2a, 2b or 3"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HubermanStanzlCheck {
    pub q: f64,
    pub i: usize,
    pub j: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViabilityReport {
    pub convexity: ConvexityReport,
    pub matrix: Option<ViabilityMatrixReport>,
    pub round_trips: Vec<HubermanStanzlCheck>,
    pub viable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    /// `lambda` for the mean-CVaR tables, `lambda_var` for recourse.
    pub risk_aversion: f64,
    pub expectation: f64,
    pub cvar: f64,
    pub variance: f64,
    /// Objective of the row's own framework on the evaluation set.
    pub phi: f64,
    pub report: RiskReport,
    /// Optimized static strategy, absent for recourse rows.
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub kind: TableKind,
    pub alpha: f64,
    pub eval_paths: usize,
    pub eval_seed: u64,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub lambda: f64,
    pub lambda_var: f64,
    pub cvar_strategy: Strategy,
    pub cvar_report: RiskReport,
    pub recourse_report: RiskReport,
    pub cvar_std: f64,
    pub recourse_std: f64,
    /// Mean-CVaR costs dominate the recourse costs.
    pub dominance: DominanceResult,
    #[serde(skip)]
    pub grid: Vec<f64>,
    #[serde(skip)]
    pub cdf_cvar: Vec<f64>,
    #[serde(skip)]
    pub cdf_recourse: Vec<f64>,
    #[serde(skip)]
    pub edges: Vec<f64>,
    #[serde(skip)]
    pub density_cvar: Vec<f64>,
    #[serde(skip)]
    pub density_recourse: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaRow {
    pub lambda: f64,
    pub joint: Strategy,
    pub price_only: Strategy,
    pub delta: Vec<f64>,
}

/// A configured run with its scenario sets generated lazily.
pub struct Experiment {
    config: RunConfig,
    market: MarketParams,
    eval: Option<ScenarioSet>,
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self> {
        let market = config.market()?;
        if config.scenarios.eval_paths == 0 {
            return Err(ExecError::InvalidArgument("eval_paths must be positive".into()));
        }
        config.solver.validate()?;
        Ok(Self {
            config,
            market,
            eval: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    pub fn viability(&self) -> ViabilityReport {
        let m = self.market.periods();
        let convexity = self.market.check_convexity();
        let matrix = self.market.viability_matrix().ok();
        let mut round_trips = Vec::new();
        let q = 0.1 * self.market.d0.abs().max(1.0);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    for q in [q, -q] {
                        let holds = self.market.check_huberman_stanzl(q, i, j).unwrap_or(false);
                        round_trips.push(HubermanStanzlCheck { q, i, j, holds });
                    }
                }
            }
        }
        let viable = convexity.strictly_convex
            && matrix.as_ref().is_none_or(|r| r.positive_definite)
            && round_trips.iter().all(|c| c.holds);
        ViabilityReport {
            convexity,
            matrix,
            round_trips,
            viable,
        }
    }

    /// Scenarios used for optimization under `params`.
    pub fn solve_set(&self, params: &MarketParams) -> Result<ScenarioSet> {
        ScenarioSet::generate(params, self.config.scenarios.paths, self.config.scenarios.seed)
    }

    /// Full-uncertainty scenarios used for every reported number.
    pub fn eval_set(&mut self) -> Result<&ScenarioSet> {
        if self.eval.is_none() {
            let s = &self.config.scenarios;
            self.eval = Some(ScenarioSet::generate(&self.market, s.eval_paths, s.eval_seed)?);
        }
        Ok(self.eval.as_ref().expect("generated above"))
    }

    /// Redistribution implied by the risk-neutral mean-variance optimum.
    pub fn default_beta(&self) -> Result<RedistributionMatrix> {
        let sol = solve_mean_variance(&self.market, self.market.d0, 0.0)?;
        RedistributionMatrix::implied(&Strategy::new(sol.y_star)?)
    }

    fn believed_market(&self, volume_uncertainty: bool) -> MarketParams {
        if volume_uncertainty {
            self.market.clone()
        } else {
            self.market.without_volume_uncertainty()
        }
    }

    /// Mean-CVaR solutions for every configured `lambda`.
    pub fn solve_cvar_sweep(&self, volume_uncertainty: bool) -> Result<Vec<MeanCvarSolution>> {
        let params = self.believed_market(volume_uncertainty);
        let set = self.solve_set(&params)?;
        let beta = self.default_beta()?;
        self.config
            .run
            .lambdas
            .iter()
            .map(|&lambda| {
                log::info!("solving mean-CVaR, lambda = {lambda}");
                solve_mean_cvar(&params, &set, &beta, lambda, &self.config.solver)
            })
            .collect()
    }

    pub fn solve_cvar(&self, lambda: f64, volume_uncertainty: bool) -> Result<MeanCvarSolution> {
        let params = self.believed_market(volume_uncertainty);
        let set = self.solve_set(&params)?;
        solve_mean_cvar(&params, &set, &self.default_beta()?, lambda, &self.config.solver)
    }

    pub fn solve_mv_sweep(&self) -> Result<Vec<MeanVarianceSolution>> {
        self.config
            .run
            .lambda_vars
            .iter()
            .map(|&lv| solve_mean_variance(&self.market, self.market.d0, lv))
            .collect()
    }

    pub fn table(&mut self, kind: TableKind) -> Result<Table> {
        let alpha = self.market.alpha;
        let rows = match kind {
            TableKind::PriceOnly | TableKind::Joint => {
                let sols = self.solve_cvar_sweep(kind == TableKind::Joint)?;
                let beta = self.default_beta()?;
                let market = self.market.clone();
                let eval = self.eval_set()?;
                let mut rows = Vec::with_capacity(sols.len());
                for sol in sols {
                    let costs = crate::cost::batch_costs(&market, eval, &sol.y_star, &beta)?;
                    let report = costs.risk_report(alpha, sol.lambda)?;
                    rows.push(TableRow {
                        risk_aversion: sol.lambda,
                        expectation: report.mean,
                        cvar: report.cvar_alpha,
                        variance: report.variance,
                        phi: report.phi_lambda,
                        report,
                        strategy: Some(sol.y_star),
                    });
                }
                rows
            }
            TableKind::Recourse => {
                let market = self.market.clone();
                let lambda_vars = self.config.run.lambda_vars.clone();
                let eval = self.eval_set()?;
                let mut rows = Vec::with_capacity(lambda_vars.len());
                for lv in lambda_vars {
                    let costs = RecoursePolicy::new(&market, lv)?.batch_costs(eval)?;
                    let report = costs.risk_report(alpha, 1.0)?;
                    rows.push(TableRow {
                        risk_aversion: lv,
                        expectation: report.mean,
                        cvar: report.cvar_alpha,
                        variance: report.variance,
                        phi: report.mean + lv * report.variance,
                        report,
                        strategy: None,
                    });
                }
                rows
            }
        };
        let s = &self.config.scenarios;
        Ok(Table {
            kind,
            alpha,
            eval_paths: s.eval_paths,
            eval_seed: s.eval_seed,
            rows,
        })
    }

    /// Cost distributions of the mean-CVaR strategy and of mean-variance
    /// with recourse on the common evaluation set.
    pub fn compare(&mut self) -> Result<Comparison> {
        let run = self.config.run.clone();
        let sol = self.solve_cvar(run.compare_lambda, true)?;
        let beta = self.default_beta()?;
        let market = self.market.clone();
        let eval = self.eval_set()?;
        let cvar_costs = crate::cost::batch_costs(&market, eval, &sol.y_star, &beta)?;
        let mv_costs = RecoursePolicy::new(&market, run.compare_lambda_var)?.batch_costs(eval)?;
        let grid = pooled_grid(&cvar_costs, &mv_costs, run.cdf_points)?;
        let dominance = sd1_dominates(
            &cvar_costs,
            &mv_costs,
            &grid,
            default_sd1_tolerance(&cvar_costs, &mv_costs),
        );
        let (lo, hi) = pooled_range(&cvar_costs, &mv_costs);
        let edges = uniform_grid(lo, hi, run.bins + 1)?;
        let hc = cvar_costs.histogram_on(&edges)?;
        let hm = mv_costs.histogram_on(&edges)?;
        Ok(Comparison {
            lambda: run.compare_lambda,
            lambda_var: run.compare_lambda_var,
            cvar_strategy: sol.y_star,
            cvar_report: cvar_costs.risk_report(market.alpha, run.compare_lambda)?,
            recourse_report: mv_costs.risk_report(market.alpha, 1.0)?,
            cvar_std: cvar_costs.std_dev()?,
            recourse_std: mv_costs.std_dev()?,
            dominance,
            cdf_cvar: cvar_costs.empirical_cdf(&grid),
            cdf_recourse: mv_costs.empirical_cdf(&grid),
            grid,
            edges,
            density_cvar: hc.densities,
            density_recourse: hm.densities,
        })
    }

    /// Per-period difference between the strategies optimized with and
    /// without volume uncertainty.
    pub fn strategy_delta(&self) -> Result<Vec<DeltaRow>> {
        let joint = self.solve_cvar_sweep(true)?;
        let price_only = self.solve_cvar_sweep(false)?;
        Ok(joint
            .into_iter()
            .zip(price_only)
            .map(|(a, b)| DeltaRow {
                lambda: a.lambda,
                delta: a
                    .y_star
                    .as_slice()
                    .iter()
                    .zip(b.y_star.as_slice())
                    .map(|(x, y)| x - y)
                    .collect(),
                joint: a.y_star,
                price_only: b.y_star,
            })
            .collect())
    }

    /// Compiled objective on the solve set, for probing a solution.
    pub fn problem(&self, lambda: f64, volume_uncertainty: bool) -> Result<SaaProblem> {
        let params = self.believed_market(volume_uncertainty);
        let set = self.solve_set(&params)?;
        SaaProblem::new(&params, &set, &self.default_beta()?, lambda)
    }
}

fn pooled_range(a: &CostDistribution, b: &CostDistribution) -> (f64, f64) {
    (a.min().min(b.min()), a.max().max(b.max()))
}

pub fn write_table_csv<W: Write>(mut out: W, table: &Table) -> Result<()> {
    let head = match table.kind {
        TableKind::Recourse => "lambda_var",
        _ => "lambda",
    };
    writeln!(out, "{head},expectation,cvar,variance,phi")?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.risk_aversion, r.expectation, r.cvar, r.variance, r.phi
        )?;
    }
    Ok(())
}

/// `period,y` rows with 1-based periods.
pub fn write_strategy_csv<W: Write>(mut out: W, y: &[f64]) -> Result<()> {
    writeln!(out, "period,y")?;
    for (i, v) in y.iter().enumerate() {
        writeln!(out, "{},{v}", i + 1)?;
    }
    Ok(())
}

pub fn write_cdf_csv<W: Write>(mut out: W, cmp: &Comparison) -> Result<()> {
    writeln!(out, "cost,cdf_cvar,cdf_recourse")?;
    for ((x, a), b) in cmp.grid.iter().zip(&cmp.cdf_cvar).zip(&cmp.cdf_recourse) {
        writeln!(out, "{x},{a},{b}")?;
    }
    Ok(())
}

pub fn write_density_csv<W: Write>(mut out: W, cmp: &Comparison) -> Result<()> {
    writeln!(out, "bin_lo,bin_hi,density_cvar,density_recourse")?;
    for (k, w) in cmp.edges.windows(2).enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            w[0], w[1], cmp.density_cvar[k], cmp.density_recourse[k]
        )?;
    }
    Ok(())
}

pub fn write_delta_csv<W: Write>(mut out: W, rows: &[DeltaRow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.delta.len());
    write!(out, "lambda")?;
    for i in 1..=m {
        write!(out, ",delta_{i}")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(out, "{}", r.lambda)?;
        for d in &r.delta {
            write!(out, ",{d}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.market().unwrap(), MarketParams::reference(LiquidityCase::Stable));
    }

    #[test]
    fn missing_market_field_is_named() {
        let err = RunConfig::from_json(r#"{"market": {"tau": [1.0]}}"#).unwrap_err();
        assert!(err.to_string().contains("sigma"), "{err}");
        let err = RunConfig::from_json(r#"{"run": {"speed": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
    }

    #[test]
    fn reference_market_is_viable() {
        let exp = Experiment::new(RunConfig::default()).unwrap();
        assert!(exp.viability().viable);
        let mut cfg = RunConfig::default();
        let mut market = MarketParams::reference(LiquidityCase::Stable);
        market.gamma *= 10.0;
        cfg.market = Some(market);
        assert!(!Experiment::new(cfg).unwrap().viability().viable);
    }

    #[test]
    fn table_names() {
        assert_eq!("2a".parse::<TableKind>().unwrap(), TableKind::PriceOnly);
        assert_eq!("3".parse::<TableKind>().unwrap(), TableKind::Recourse);
        assert!("4".parse::<TableKind>().is_err());
    }

    #[test]
    fn csv_layouts() {
        let mut buf = Vec::new();
        write_strategy_csv(&mut buf, &[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "period,y\n1,0.5\n2,0.25\n3,0.25\n");
    }
}
