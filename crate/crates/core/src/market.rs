//! Market parameters, linear impact functions and the convexity/viability
//! predicates that gate every solve.
//!
//! Periods are indexed from zero throughout the crate: period `i` here is
//! the `(i+1)`-th trading interval.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ExecError, Result};

/// Daily volume used by the two reference markets, shares.
pub const REFERENCE_DAILY_VOLUME: f64 = 5.0e6;

/// Market, impact and uncertainty constants for an `m`-period execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Optional redundancy check; the period count is always `tau.len()`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Period lengths, days.
    pub tau: Vec<f64>,
    /// Price-shock standard deviations, ($/share)/day^(1/2).
    pub sigma: Vec<f64>,
    /// Fixed temporary-impact costs, $/share.
    pub epsilon: Vec<f64>,
    /// Variable temporary-impact coefficients, ($/share)/(share/day).
    pub eta: Vec<f64>,
    /// Permanent-impact coefficient, $/share².
    pub gamma: f64,
    /// Initial demand forecast, shares.
    pub d0: f64,
    /// Forecast-update standard deviations, shares, one per update (`m - 1`).
    pub nu: Vec<f64>,
    /// CVaR tail level in (0, 1].
    pub alpha: f64,
    /// Initial price. Cancels out of every cost; kept for bookkeeping.
    #[serde(default)]
    pub s0: f64,
}

/// The two reference markets: constant bid-ask spread, or a spread that
/// widens linearly from 1/8 to 2/8 towards the end of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LiquidityCase {
    #[serde(rename = "a")]
    Stable,
    #[serde(rename = "b")]
    DryingUp,
}

impl std::str::FromStr for LiquidityCase {
    type Err = ExecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(LiquidityCase::Stable),
            "b" | "B" => Ok(LiquidityCase::DryingUp),
            other => Err(ExecError::InvalidArgument(format!(
                "unknown market case `{other}` (expected a or b)"
            ))),
        }
    }
}

/// Bid-ask spread per period for a reference case.
pub fn bid_ask_schedule(case: LiquidityCase, m: usize) -> Vec<f64> {
    match case {
        LiquidityCase::Stable => vec![1.0 / 8.0; m],
        LiquidityCase::DryingUp if m == 1 => vec![1.0 / 8.0],
        LiquidityCase::DryingUp => (0..m)
            .map(|i| (1.0 / 8.0) * (1.0 + i as f64 / (m - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub strictly_convex: bool,
    /// `eta_i / tau_i - gamma / 2` per period.
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViabilityMatrixReport {
    /// `(m-1) x (m-1)` matrix `diag(margin_i, i < m-1) + margin_{m-1} * ones`.
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub positive_semidefinite: bool,
    pub positive_definite: bool,
}

impl MarketParams {
    /// Reference market for `case` with the standard five one-day periods.
    pub fn reference(case: LiquidityCase) -> Self {
        Self::reference_with_periods(case, 5)
    }

    pub fn reference_with_periods(case: LiquidityCase, m: usize) -> Self {
        let v = REFERENCE_DAILY_VOLUME;
        let spread = bid_ask_schedule(case, m);
        let d0 = 1.0e6;
        MarketParams {
            m: None,
            tau: vec![1.0; m],
            sigma: vec![0.95; m],
            epsilon: spread.iter().map(|b| 0.5 * b).collect(),
            eta: spread.iter().map(|b| b / (0.01 * v)).collect(),
            // Significant permanent impact: 16 first-period spreads at 10% of V.
            gamma: (16.0 / 8.0) / (0.1 * v),
            d0,
            nu: vec![0.05 * d0; m.saturating_sub(1)],
            alpha: 0.3,
            s0: 50.0,
        }
    }

    /// Number of trading periods.
    pub fn periods(&self) -> usize {
        self.tau.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.tau.len();
        let bad = |msg: String| Err(ExecError::InvalidParams(msg));
        if m == 0 {
            return bad("at least one trading period is required".into());
        }
        if let Some(declared) = self.m {
            if declared != m {
                return bad(format!("m = {declared} but tau has {m} entries"));
            }
        }
        for (name, v) in [("sigma", &self.sigma), ("epsilon", &self.epsilon), ("eta", &self.eta)] {
            if v.len() != m {
                return bad(format!("{name} has {} entries, expected {m}", v.len()));
            }
        }
        if self.nu.len() != m - 1 {
            return bad(format!("nu has {} entries, expected {}", self.nu.len(), m - 1));
        }
        let all = |v: &[f64], ok: fn(f64) -> bool| v.iter().all(|&x| x.is_finite() && ok(x));
        if !all(&self.tau, |x| x > 0.0) {
            return bad("tau must be > 0".into());
        }
        if !all(&self.sigma, |x| x >= 0.0) {
            return bad("sigma must be >= 0".into());
        }
        if !all(&self.epsilon, |x| x >= 0.0) {
            return bad("epsilon must be >= 0".into());
        }
        if !all(&self.eta, |x| x > 0.0) {
            return bad("eta must be > 0".into());
        }
        if !all(&self.nu, |x| x >= 0.0) {
            return bad("nu must be >= 0".into());
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be >= 0".into());
        }
        if !self.d0.is_finite() {
            return bad("d0 must be finite".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Copy with every forecast-update deviation replaced by `nu`.
    pub fn with_volume_uncertainty(&self, nu: f64) -> Self {
        MarketParams {
            nu: vec![nu; self.nu.len()],
            ..self.clone()
        }
    }

    pub fn without_volume_uncertainty(&self) -> Self {
        self.with_volume_uncertainty(0.0)
    }

    pub fn without_price_uncertainty(&self) -> Self {
        MarketParams {
            sigma: vec![0.0; self.sigma.len()],
            ..self.clone()
        }
    }

    /// Market restricted to periods `from..m` (the remaining horizon after
    /// `from` periods have elapsed).
    pub fn tail(&self, from: usize) -> Self {
        let m = self.periods();
        assert!(from < m, "tail start {from} beyond {m} periods");
        MarketParams {
            m: None,
            tau: self.tau[from..].to_vec(),
            sigma: self.sigma[from..].to_vec(),
            epsilon: self.epsilon[from..].to_vec(),
            eta: self.eta[from..].to_vec(),
            nu: self.nu[from.min(m - 1)..].to_vec(),
            ..self.clone()
        }
    }

    /// `g(v) = gamma * v`.
    pub fn permanent_impact(&self, v: f64) -> f64 {
        self.gamma * v
    }

    /// `h_i(v) = epsilon_i * sign(v) + eta_i * v`, with `sign(0) = 0`.
    pub fn temporary_impact(&self, i: usize, v: f64) -> Result<f64> {
        let m = self.periods();
        if i >= m {
            return Err(ExecError::PeriodOutOfRange { index: i, periods: m });
        }
        Ok(self.epsilon[i] * sign(v) + self.eta[i] * v)
    }

    /// `eta_i / tau_i - gamma / 2`: the per-period curvature of the cost in
    /// the traded volume.
    pub fn quadratic_coefficients(&self) -> Vec<f64> {
        self.eta
            .iter()
            .zip(&self.tau)
            .map(|(e, t)| e / t - 0.5 * self.gamma)
            .collect()
    }

    pub fn check_convexity(&self) -> ConvexityReport {
        let margins = self.quadratic_coefficients();
        ConvexityReport {
            strictly_convex: margins.iter().all(|&c| c > 0.0),
            margins,
        }
    }

    /// Builds `M = D + c_m * ones` over the first `m - 1` periods; market
    /// viability requires `M` to be positive semi-definite.
    pub fn viability_matrix(&self) -> Result<ViabilityMatrixReport> {
        let m = self.periods();
        if m < 2 {
            return Err(ExecError::InvalidArgument(
                "viability matrix needs at least two periods".into(),
            ));
        }
        let c = self.quadratic_coefficients();
        let k = m - 1;
        let last = c[m - 1];
        let mat = DMatrix::from_fn(k, k, |r, s| if r == s { c[r] + last } else { last });
        let norm_inf = (0..k)
            .map(|r| mat.row(r).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let eig = SymmetricEigen::new(mat.clone());
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        let min_eigenvalue = eigenvalues[0];
        let tol = 1e-10 * norm_inf;
        Ok(ViabilityMatrixReport {
            matrix: (0..k).map(|r| mat.row(r).iter().copied().collect()).collect(),
            positive_semidefinite: min_eigenvalue >= -tol,
            positive_definite: min_eigenvalue > tol,
            eigenvalues,
            min_eigenvalue,
        })
    }

    /// Round-trip condition for trading `q` in period `i` and `-q` in `j`:
    /// the temporary cost must strictly exceed the permanent-impact gain.
    pub fn check_huberman_stanzl(&self, q: f64, i: usize, j: usize) -> Result<bool> {
        let m = self.periods();
        for idx in [i, j] {
            if idx >= m {
                return Err(ExecError::PeriodOutOfRange { index: idx, periods: m });
            }
        }
        if i == j {
            return Err(ExecError::InvalidArgument(
                "round-trip periods must be distinct".into(),
            ));
        }
        if q == 0.0 {
            return Err(ExecError::InvalidArgument("round-trip volume must be nonzero".into()));
        }
        let lhs = (self.epsilon[i] * sign(q / self.tau[i]) - self.epsilon[j] * sign(-q / self.tau[j]))
            + q * (self.eta[i] / self.tau[i] + self.eta[j] / self.tau[j]);
        let rhs = self.gamma * q;
        Ok(if q > 0.0 { lhs > rhs } else { lhs < rhs })
    }

    pub fn has_constant_epsilon(&self) -> bool {
        self.epsilon.windows(2).all(|w| w[0] == w[1])
    }

    /// FNV-1a over the bit patterns of every field.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.periods() as u64);
        for v in [&self.tau, &self.sigma, &self.epsilon, &self.eta, &self.nu] {
            h.write_u64(v.len() as u64);
            for x in v.iter() {
                h.write_u64(x.to_bits());
            }
        }
        for x in [self.gamma, self.d0, self.alpha, self.s0] {
            h.write_u64(x.to_bits());
        }
        h.finish()
    }
}

/// `sign(0) = 0`, so that a zero trade has zero fixed cost.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn case_a() -> MarketParams {
        MarketParams::reference(LiquidityCase::Stable)
    }

    #[test]
    fn reference_values() {
        let p = case_a();
        p.validate().unwrap();
        assert_relative_eq!(p.gamma, 4e-6, max_relative = 1e-15);
        assert_relative_eq!(p.eta[0], 2.5e-6, max_relative = 1e-15);
        assert_eq!(p.epsilon[0], 1.0 / 16.0);
        assert_eq!(p.nu, vec![5e4; 4]);

        let b = MarketParams::reference(LiquidityCase::DryingUp);
        assert_relative_eq!(b.epsilon[4], 0.125, max_relative = 1e-15);
        assert_relative_eq!(b.eta[2], 0.1875 / 5e4, max_relative = 1e-15);
    }

    #[test]
    fn permanent_impact_examples() {
        let p = case_a();
        assert_eq!(p.permanent_impact(0.0), 0.0);
        assert_relative_eq!(p.permanent_impact(1e6), 4.0, max_relative = 1e-12);
        let free = MarketParams { gamma: 0.0, ..case_a() };
        assert_eq!(free.permanent_impact(123.0), 0.0);
    }

    #[test]
    fn temporary_impact_examples() {
        let p = case_a();
        assert_eq!(p.temporary_impact(0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(p.temporary_impact(0, 2e5).unwrap(), 0.5625, max_relative = 1e-12);
        assert_relative_eq!(p.temporary_impact(0, -1e5).unwrap(), -0.3125, max_relative = 1e-12);
        assert!(matches!(
            p.temporary_impact(5, 1.0),
            Err(ExecError::PeriodOutOfRange { index: 5, periods: 5 })
        ));
    }

    #[test]
    fn per_period_temporary_cost_identity() {
        let p = MarketParams::reference(LiquidityCase::DryingUp);
        for i in 0..p.periods() {
            for n in [-3e5, -1.0, 0.0, 2.0, 7e4] {
                let lhs = n * p.temporary_impact(i, n / p.tau[i]).unwrap();
                let rhs = p.epsilon[i] * f64::abs(n) + p.eta[i] * n * n / p.tau[i];
                assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn convexity_margins() {
        let r = case_a().check_convexity();
        assert!(r.strictly_convex);
        for m in r.margins {
            assert_relative_eq!(m, 5e-7, max_relative = 1e-9);
        }
        let no_perm = MarketParams { gamma: 0.0, ..case_a() };
        assert!(no_perm.check_convexity().strictly_convex);

        let p = case_a();
        let boundary = MarketParams { gamma: 2.0 * p.eta[0] / p.tau[0], ..p };
        assert!(!boundary.check_convexity().strictly_convex);
    }

    #[test]
    fn viability_matrix_cases() {
        let r = case_a().viability_matrix().unwrap();
        assert!(r.positive_definite && r.positive_semidefinite);
        // diag(5e-7) + 5e-7 * ones: eigenvalues 5e-7 (x3) and 5 * 5e-7.
        assert_relative_eq!(r.min_eigenvalue, 5e-7, max_relative = 1e-9);
        assert_relative_eq!(r.eigenvalues[3], 2.5e-6, max_relative = 1e-9);

        // margin -1 everywhere: M = -I - ones, all eigenvalues negative.
        let p = case_a();
        let bad = MarketParams { gamma: 2.0 * (p.eta[0] + 1.0), ..p };
        let r = bad.viability_matrix().unwrap();
        assert!(!r.positive_semidefinite);
        assert_relative_eq!(r.min_eigenvalue, -5.0, max_relative = 1e-9);

        let two = MarketParams::reference_with_periods(LiquidityCase::Stable, 2);
        let flat = MarketParams { gamma: 2.0 * two.eta[0], ..two };
        let r = flat.viability_matrix().unwrap();
        assert_eq!(r.matrix, vec![vec![0.0]]);
        assert!(r.positive_semidefinite);
        assert!(!r.positive_definite);

        let one = MarketParams::reference_with_periods(LiquidityCase::Stable, 1);
        assert!(one.viability_matrix().is_err());
    }

    #[test]
    fn huberman_stanzl_examples() {
        let p = case_a();
        assert!(p.check_huberman_stanzl(1e5, 0, 1).unwrap());
        assert!(p.check_huberman_stanzl(-1e5, 0, 1).unwrap());
        assert!(p.check_huberman_stanzl(1e5, 1, 1).is_err());

        let tight = MarketParams {
            epsilon: vec![0.0; 5],
            gamma: 2.0 * p.eta[0],
            ..p
        };
        assert!(!tight.check_huberman_stanzl(1e5, 0, 1).unwrap());
        assert!(!tight.check_huberman_stanzl(-1e5, 0, 1).unwrap());
    }

    #[test]
    fn validation_rejects_bad_lengths() {
        let mut p = case_a();
        p.nu.push(1.0);
        assert!(p.validate().is_err());
        let mut p = case_a();
        p.alpha = 0.0;
        assert!(p.validate().is_err());
        let mut p = case_a();
        p.m = Some(4);
        assert!(p.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_changes() {
        let a = case_a();
        assert_eq!(a.fingerprint(), case_a().fingerprint());
        assert_ne!(a.fingerprint(), a.without_volume_uncertainty().fingerprint());
    }

    #[test]
    fn tail_restricts_every_vector() {
        let p = MarketParams::reference(LiquidityCase::DryingUp);
        let t = p.tail(2);
        t.validate().unwrap();
        assert_eq!(t.periods(), 3);
        assert_eq!(t.eta, p.eta[2..].to_vec());
        assert_eq!(t.nu.len(), 2);
        assert_eq!(p.tail(4).nu.len(), 0);
    }
}
