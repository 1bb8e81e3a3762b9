use execrisk::market::{LiquidityCase, MarketParams};
use execrisk::experiment::{Experiment, RunConfig};
use execrisk::scenario::{Scenario, ScenarioSet};
use execrisk::solver::{
    evaluate_objective, mean_variance_objective, solve_mean_cvar, solve_mean_variance,
    DescentMethod, SaaProblem, SolverConfig,
};
use execrisk::strategy::{RedistributionMatrix, Strategy};
use proptest::prelude::*;

fn case_a() -> MarketParams {
    MarketParams::reference(LiquidityCase::Stable)
}

/// Price-only scenarios in antithetic pairs, so the sample mean of every
/// shock is zero.
fn antithetic(params: &MarketParams, pairs: usize, seed: u64) -> ScenarioSet {
    let base = ScenarioSet::generate(&params.without_volume_uncertainty(), pairs, seed).unwrap();
    let mut all = Vec::with_capacity(2 * pairs);
    for s in base.iter() {
        all.push(Scenario::price_only(s.xi.to_vec()));
        all.push(Scenario::price_only(s.xi.iter().map(|v| -v).collect()));
    }
    ScenarioSet::from_scenarios(&all).unwrap()
}

#[test]
fn risk_neutral_without_volume_risk_matches_mean_variance() {
    for case in [LiquidityCase::Stable, LiquidityCase::DryingUp] {
        let p = MarketParams::reference(case).without_volume_uncertainty();
        let set = antithetic(&p, 2000, 8);
        let beta = RedistributionMatrix::uniform(5);
        let cvar = solve_mean_cvar(&p, &set, &beta, 0.0, &SolverConfig::default()).unwrap();
        let mv = solve_mean_variance(&p, p.d0, 0.0).unwrap();
        for (a, b) in cvar.y_star.as_slice().iter().zip(&mv.y_star) {
            assert!((a - b).abs() <= 1e-6, "{case:?}: {:?} vs {:?}", cvar.y_star, mv.y_star);
        }
    }
}

#[test]
fn deterministic_three_period_market_matches_grid_search() {
    let p = MarketParams::reference_with_periods(LiquidityCase::DryingUp, 3)
        .without_volume_uncertainty()
        .without_price_uncertainty();
    let set = ScenarioSet::generate(&p, 100, 0).unwrap();
    let beta = RedistributionMatrix::uniform(3);
    let sol = solve_mean_cvar(&p, &set, &beta, 0.5, &SolverConfig::default()).unwrap();
    let steps = 400;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for a in 0..=steps {
        for b in 0..=(steps - a) {
            let (y1, y2) = (a as f64 / steps as f64, b as f64 / steps as f64);
            let n = [y1 * p.d0, y2 * p.d0, (1.0 - y1 - y2) * p.d0];
            let f = mean_variance_objective(&p, &n, p.d0, 0.0);
            if f < best.0 {
                best = (f, y1, y2);
            }
        }
    }
    let y = sol.y_star.as_slice();
    assert!((y[0] - best.1).abs() <= 1.0 / steps as f64, "{y:?} vs {best:?}");
    assert!((y[1] - best.2).abs() <= 1.0 / steps as f64, "{y:?} vs {best:?}");
    assert!(sol.objective <= best.0 * (1.0 + 1e-12));
}

#[test]
fn solution_survives_random_perturbations() {
    let p = MarketParams::reference(LiquidityCase::DryingUp);
    let set = ScenarioSet::generate(&p, 20_000, 21).unwrap();
    let beta = RedistributionMatrix::implied(
        &Strategy::new(solve_mean_variance(&p, p.d0, 0.0).unwrap().y_star).unwrap(),
    )
    .unwrap();
    for lambda in [0.0, 0.5, 1.0] {
        let sol = solve_mean_cvar(&p, &set, &beta, lambda, &SolverConfig::default()).unwrap();
        let prob = SaaProblem::new(&p, &set, &beta, lambda).unwrap();
        let f = prob.value(sol.y_star.as_slice());
        assert!((f - sol.objective).abs() <= 1e-12 * f.abs());
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        for k in 0..100 {
            let mut h: Vec<f64> = (0..5)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let mean = h.iter().sum::<f64>() / 5.0;
            let size = 1e-4 * (1 + k % 10) as f64;
            h.iter_mut().for_each(|v| *v = (*v - mean) * size);
            let probe: Vec<f64> = sol.y_star.as_slice().iter().zip(&h).map(|(a, b)| a + b).collect();
            let fp = prob.value(&probe);
            assert!(fp >= f - 1e-6 * f.abs(), "lambda {lambda}: {fp} < {f}");
        }
    }
}

#[test]
fn solves_are_bit_identical() {
    let p = case_a();
    let set = ScenarioSet::generate(&p, 5000, 2).unwrap();
    let beta = RedistributionMatrix::uniform(5);
    let cfg = SolverConfig {
        restarts: 2,
        seed: 4,
        ..SolverConfig::default()
    };
    let a = solve_mean_cvar(&p, &set, &beta, 0.8, &cfg).unwrap();
    let b = solve_mean_cvar(&p, &set, &beta, 0.8, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn subgradient_method_approaches_quasi_newton_optimum() {
    let p = MarketParams::reference(LiquidityCase::DryingUp);
    let set = ScenarioSet::generate(&p, 5000, 6).unwrap();
    let beta = RedistributionMatrix::uniform(5);
    let qn = solve_mean_cvar(&p, &set, &beta, 0.5, &SolverConfig::default()).unwrap();
    let cfg = SolverConfig {
        method: DescentMethod::Subgradient,
        max_iters: 5000,
        patience: 500,
        initial_step: 0.05,
        ..SolverConfig::default()
    };
    let sg = solve_mean_cvar(&p, &set, &beta, 0.5, &cfg).unwrap();
    assert!(sg.objective >= qn.objective * (1.0 - 1e-12));
    assert!(sg.objective <= qn.objective * (1.0 + 1e-3), "{} vs {}", sg.objective, qn.objective);
    assert!(sg.diagnostics.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn full_scale_cvar_of_risk_averse_solution() {
    let mut cfg = RunConfig::default();
    cfg.scenarios.paths = 1_000_000;
    let exp = Experiment::new(cfg).unwrap();
    let sol = exp.solve_cvar(1.0, true).unwrap();
    let set = exp.solve_set(exp.market()).unwrap();
    let report =
        evaluate_objective(exp.market(), &set, &exp.default_beta().unwrap(), &sol.y_star, 1.0).unwrap();
    assert!((report.cvar_alpha / 2.989e6 - 1.0).abs() <= 0.05, "{report:?}");
    assert!((report.phi_lambda - sol.objective).abs() <= 1e-9 * sol.objective);
}

#[test]
fn evaluation_reports() {
    let p = case_a();
    let set = ScenarioSet::generate(&p, 1000, 1).unwrap();
    let beta = RedistributionMatrix::uniform(5);
    let y = Strategy::uniform(5);
    let r = evaluate_objective(&p, &set, &beta, &y, 0.0).unwrap();
    let costs = execrisk::batch_costs(&p, &set, &y, &beta).unwrap();
    assert_eq!(r.phi_lambda, costs.mean());
    assert_eq!(r, evaluate_objective(&p, &set, &beta, &y, 0.0).unwrap());

    let flat = p.without_volume_uncertainty().without_price_uncertainty();
    let set = ScenarioSet::generate(&flat, 1000, 1).unwrap();
    let r = evaluate_objective(&flat, &set, &beta, &y, 0.5).unwrap();
    let exact = mean_variance_objective(&flat, &[2e5; 5], flat.d0, 0.0);
    assert!((r.mean - exact).abs() <= 1e-9 * exact);
    assert_eq!(r.variance, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mean_variance_scale_and_sign(lv in 0.0f64..1e-4, d in 1e3f64..1e7, case_b in prop::bool::ANY) {
        let p = if case_b {
            MarketParams::reference(LiquidityCase::DryingUp)
        } else {
            case_a()
        };
        let a = solve_mean_variance(&p, d, lv).unwrap();
        let neg = solve_mean_variance(&p, -d, lv).unwrap();
        for (x, z) in a.n_star.iter().zip(&neg.n_star) {
            prop_assert!((x + z).abs() <= 1e-9 * d);
        }
        prop_assert!(a.kkt_residual(&p, d) <= 1e-8);
        prop_assert!((a.n_star.iter().sum::<f64>() - d).abs() <= 1e-9 * d);
        if !case_b {
            let b = solve_mean_variance(&p, 2.0 * d, lv).unwrap();
            for (x, z) in a.y_star.iter().zip(&b.y_star) {
                prop_assert!((x - z).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sample_objective_is_midpoint_convex(
        a in prop::collection::vec(-0.5f64..1.5, 5),
        b in prop::collection::vec(-0.5f64..1.5, 5),
        lambda in 0.0f64..1.0,
    ) {
        let p = MarketParams::reference(LiquidityCase::DryingUp);
        let set = ScenarioSet::generate(&p, 500, 12).unwrap();
        let prob = SaaProblem::new(&p, &set, &RedistributionMatrix::uniform(5), lambda).unwrap();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, z)| 0.5 * (x + z)).collect();
        let (fa, fb, fm) = (prob.value(&a), prob.value(&b), prob.value(&mid));
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-9 * fa.abs().max(fb.abs()));
    }
}
