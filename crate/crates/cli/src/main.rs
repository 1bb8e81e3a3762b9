use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use execrisk::experiment::{
    write_cdf_csv, write_delta_csv, write_density_csv, write_strategy_csv, write_table_csv,
    Experiment, RunConfig, TableKind,
};
use execrisk::LiquidityCase;
use serde::Serialize;

/// Optimal execution under price and volume uncertainty.
#[derive(Parser)]
#[command(name = "execrisk", version)]
struct Cli {
    /// JSON run configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Evaluation paths (overrides scenarios.eval_paths).
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Paths used for optimization (overrides scenarios.paths).
    #[arg(long, global = true)]
    solve_paths: Option<usize>,
    /// Base seed: optimization uses it, evaluation uses seed + 1.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reference market when the config has no market section.
    #[arg(long, global = true)]
    case: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convexity margins, viability matrix and round-trip checks.
    Viability,
    /// Optimal strategies for one risk aversion or the configured grid.
    Solve {
        #[arg(long, value_enum)]
        model: Model,
        /// Single risk aversion; defaults to the configured grid.
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        /// Optimize as if the final demand were known (cvar only).
        #[arg(long)]
        price_only: bool,
    },
    /// Reproduce a results table: 2a, 2b or 3.
    Table { which: String },
    /// Dominance test of mean-CVaR against mean-variance with recourse.
    Compare,
    /// Strategy change caused by volume uncertainty, per lambda.
    StrategyDelta,
    /// Write a binary scenario file of --paths paths drawn with --seed.
    GenScenarios {
        /// Generate with the demand forecast frozen.
        #[arg(long)]
        price_only: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Mv,
    Cvar,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(n) = cli.paths {
        cfg.scenarios.eval_paths = n;
    }
    if let Some(n) = cli.solve_paths {
        cfg.scenarios.paths = n;
    }
    if let Some(seed) = cli.seed {
        cfg.scenarios.seed = seed;
        cfg.scenarios.eval_seed = seed.wrapping_add(1);
    }
    if let Some(case) = &cli.case {
        cfg.run.case = case.parse::<LiquidityCase>()?;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let mut exp = Experiment::new(cfg)?;
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::Viability => {
            let report = exp.viability();
            write_json(out, "viability.json", &report)?;
            println!("convexity margins: {:?}", report.convexity.margins);
            if let Some(m) = &report.matrix {
                println!("viability matrix eigenvalues: {:?}", m.eigenvalues);
            }
            let failed = report.round_trips.iter().filter(|c| !c.holds).count();
            println!("round trips violating the impact bound: {failed}/{}", report.round_trips.len());
            if report.viable {
                println!("viable, strictly convex");
            } else {
                println!("violation: market admits price manipulation or is not strictly convex");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Solve {
            model,
            lambda,
            price_only,
        } => match model {
            Model::Mv => {
                let grid = match lambda {
                    Some(l) => vec![l],
                    None => exp.config().run.lambda_vars.clone(),
                };
                let d = exp.market().d0;
                for lv in grid {
                    let sol = execrisk::solve_mean_variance(exp.market(), d, lv)?;
                    write_json(out, &format!("solve_mv_{lv}.json"), &sol)?;
                    let mut w = create(out, &format!("strategy_mv_{lv}.csv"))?;
                    write_strategy_csv(&mut w, &sol.y_star)?;
                    w.flush()?;
                    println!("lambda_var {lv}: y = {:?}", sol.y_star);
                }
            }
            Model::Cvar => {
                let sols = match lambda {
                    Some(l) => vec![exp.solve_cvar(l, !price_only)?],
                    None => exp.solve_cvar_sweep(!price_only)?,
                };
                for sol in sols {
                    let l = sol.lambda;
                    write_json(out, &format!("solve_cvar_{l}.json"), &sol)?;
                    let mut w = create(out, &format!("strategy_cvar_{l}.csv"))?;
                    write_strategy_csv(&mut w, sol.y_star.as_slice())?;
                    w.flush()?;
                    println!(
                        "lambda {l}: y = {:?}, objective {}, iterations {}",
                        sol.y_star.as_slice(),
                        sol.objective,
                        sol.diagnostics.iterations
                    );
                }
            }
        },
        Command::Table { which } => {
            let kind: TableKind = which.parse()?;
            let table = exp.table(kind)?;
            write_json(out, &format!("table_{which}.json"), &table)?;
            let mut w = create(out, &format!("table_{which}.csv"))?;
            write_table_csv(&mut w, &table)?;
            w.flush()?;
            write_table_csv(std::io::stdout().lock(), &table)?;
        }
        Command::Compare => {
            let cmp = exp.compare()?;
            write_json(out, "compare.json", &cmp)?;
            let mut w = create(out, "cdf.csv")?;
            write_cdf_csv(&mut w, &cmp)?;
            w.flush()?;
            let mut w = create(out, "density.csv")?;
            write_density_csv(&mut w, &cmp)?;
            w.flush()?;
            println!(
                "std dev: recourse {} -> mean-CVaR {}",
                cmp.recourse_std, cmp.cvar_std
            );
            println!(
                "first-order dominance of mean-CVaR: {} (max violation {}, tolerance {})",
                cmp.dominance.dominates, cmp.dominance.max_violation, cmp.dominance.tolerance
            );
        }
        Command::StrategyDelta => {
            let rows = exp.strategy_delta()?;
            write_json(out, "strategy_delta.json", &rows)?;
            let mut w = create(out, "strategy_delta.csv")?;
            write_delta_csv(&mut w, &rows)?;
            w.flush()?;
            write_delta_csv(std::io::stdout().lock(), &rows)?;
        }
        Command::GenScenarios { price_only } => {
            let s = exp.config().scenarios.clone();
            let market = if price_only {
                exp.market().without_volume_uncertainty()
            } else {
                exp.market().clone()
            };
            if s.eval_paths == 0 {
                bail!("--paths must be positive");
            }
            let seed = cli.seed.unwrap_or(s.eval_seed);
            let set = execrisk::ScenarioSet::generate(&market, s.eval_paths, seed)?;
            let path = out.join("scenarios.bin");
            set.save(&path)?;
            println!(
                "wrote {} paths (seed {}, fingerprint {:016x}) to {}",
                set.len(),
                set.seed(),
                set.fingerprint(),
                path.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
