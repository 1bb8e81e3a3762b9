//! Empirical statistics of cost distributions.
//!
//! The tail estimators work on the empirical measure. With `K = alpha N`,
//! CVaR is the average of the `K` largest samples where the boundary order
//! statistic carries the fractional weight `K - floor(K)`; this is exactly
//! the minimum over `t` of `t + sum(max(0, c - t)) / K`. VaR is the
//! `ceil((1 - alpha) N)`-th smallest sample.

use std::io::Write;

use serde::Serialize;

use crate::error::{ExecError, Result};

/// `alpha N` within this distance of an integer is treated as that integer.
const TAIL_COUNT_SNAP: f64 = 1e-9;

/// Nonempty set of finite cost samples, in production order.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDistribution {
    samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskReport {
    pub mean: f64,
    pub variance: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    pub phi_lambda: f64,
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailStats {
    pub var: f64,
    pub cvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceResult {
    pub dominates: bool,
    /// `max_x F_b(x) - F_a(x)`; at most `tol` when `a` dominates.
    pub max_violation: f64,
    pub tolerance: f64,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(ExecError::InvalidArgument(format!("alpha = {alpha} outside (0, 1]")))
    }
}

/// Splits `alpha N` into whole tail samples and the boundary weight.
pub(crate) fn tail_split(n: usize, alpha: f64) -> (usize, f64, f64) {
    let k = alpha * n as f64;
    let mut whole = k.floor();
    if k - whole > 1.0 - TAIL_COUNT_SNAP {
        whole += 1.0;
    }
    let mut frac = k - whole;
    if frac.abs() < TAIL_COUNT_SNAP {
        frac = 0.0;
    }
    let whole = (whole as usize).min(n);
    (whole, frac.max(0.0), k)
}

/// VaR and CVaR of raw samples; reorders `buf`.
pub(crate) fn tail_stats_in_place(buf: &mut [f64], alpha: f64) -> TailStats {
    let n = buf.len();
    let (whole, frac, k) = tail_split(n, alpha);
    if whole >= n {
        let mean = buf.iter().sum::<f64>() / n as f64;
        let min = buf.iter().copied().fold(f64::INFINITY, f64::min);
        return TailStats { var: min, cvar: mean };
    }
    let pivot_at = n - whole - 1;
    let (_, pivot, top) = buf.select_nth_unstable_by(pivot_at, f64::total_cmp);
    let pivot = *pivot;
    let top_sum: f64 = top.iter().sum();
    TailStats {
        var: pivot,
        cvar: (top_sum + frac * pivot) / k,
    }
}

/// Rockafellar-Uryasev functional `t + sum(max(0, c - t)) / (alpha N)`.
pub fn ru_functional(samples: &[f64], alpha: f64, t: f64) -> f64 {
    let excess: f64 = samples.iter().map(|&c| (c - t).max(0.0)).sum();
    t + excess / (alpha * samples.len() as f64)
}

impl CostDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(ExecError::EmptyDistribution);
        }
        if let Some(i) = samples.iter().position(|c| !c.is_finite()) {
            return Err(ExecError::NonFiniteSample(i));
        }
        Ok(CostDistribution { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Result<f64> {
        let n = self.len();
        if n < 2 {
            return Err(ExecError::InvalidArgument(
                "variance needs at least two samples".into(),
            ));
        }
        let mean = self.mean();
        let ss: f64 = self.samples.iter().map(|c| (c - mean) * (c - mean)).sum();
        Ok(ss / (n - 1) as f64)
    }

    pub fn std_dev(&self) -> Result<f64> {
        Ok(self.variance()?.sqrt())
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn tail_stats(&self, alpha: f64) -> Result<TailStats> {
        check_alpha(alpha)?;
        let mut buf = self.samples.clone();
        Ok(tail_stats_in_place(&mut buf, alpha))
    }

    /// Smallest sample `c` with empirical `F(c) >= 1 - alpha`.
    pub fn empirical_var(&self, alpha: f64) -> Result<f64> {
        Ok(self.tail_stats(alpha)?.var)
    }

    pub fn empirical_cvar(&self, alpha: f64) -> Result<f64> {
        Ok(self.tail_stats(alpha)?.cvar)
    }

    pub fn risk_report(&self, alpha: f64, lambda: f64) -> Result<RiskReport> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ExecError::InvalidArgument(format!(
                "lambda = {lambda} outside [0, 1]"
            )));
        }
        let tail = self.tail_stats(alpha)?;
        let mean = self.mean();
        Ok(RiskReport {
            mean,
            variance: self.variance()?,
            var_alpha: tail.var,
            cvar_alpha: tail.cvar,
            phi_lambda: (1.0 - lambda) * mean + lambda * tail.cvar,
            alpha,
            lambda,
        })
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut s = self.samples.clone();
        s.sort_unstable_by(f64::total_cmp);
        s
    }

    /// Empirical CDF at each grid point.
    pub fn empirical_cdf(&self, grid: &[f64]) -> Vec<f64> {
        cdf_of_sorted(&self.sorted(), grid)
    }

    /// Uniform-bin density estimate over `[min, max]`.
    pub fn histogram(&self, bins: usize) -> Result<Histogram> {
        let (lo, hi) = (self.min(), self.max());
        self.histogram_on(&uniform_grid(lo, hi, bins + 1)?)
    }

    /// Density estimate on explicit increasing `edges`; samples outside the
    /// edges are clamped into the first or last bin.
    pub fn histogram_on(&self, edges: &[f64]) -> Result<Histogram> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ExecError::InvalidArgument(
                "histogram edges must be strictly increasing".into(),
            ));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0usize; bins];
        for &c in &self.samples {
            let b = edges[1..].partition_point(|&e| e <= c).min(bins - 1);
            counts[b] += 1;
        }
        let n = self.len() as f64;
        let densities = counts
            .iter()
            .zip(edges.windows(2))
            .map(|(&k, w)| k as f64 / (n * (w[1] - w[0])))
            .collect();
        Ok(Histogram {
            edges: edges.to_vec(),
            densities,
        })
    }
}

pub fn cdf_of_sorted(sorted: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&x| sorted.partition_point(|&c| c <= x) as f64 / n)
        .collect()
}

/// `points` evenly spaced values from `lo` to `hi`; a degenerate range is
/// widened to unit width around its centre.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(ExecError::InvalidArgument("a grid needs at least two points".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|k| if k + 1 == points { hi } else { lo + step * k as f64 })
        .collect())
}

/// Grid spanning the pooled support of two distributions.
pub fn pooled_grid(a: &CostDistribution, b: &CostDistribution, points: usize) -> Result<Vec<f64>> {
    uniform_grid(a.min().min(b.min()), a.max().max(b.max()), points)
}

/// DKW band `sqrt(ln(2 / delta) / (2 N))`: the empirical CDF of `N`
/// samples stays this close to the true CDF everywhere with probability at
/// least `1 - delta`.
pub fn dkw_tolerance(n: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Two-sample tolerance at overall level `delta = 0.01`: the sum of both
/// bands, each at `delta / 2`.
pub fn default_sd1_tolerance(a: &CostDistribution, b: &CostDistribution) -> f64 {
    dkw_tolerance(a.len(), 0.005) + dkw_tolerance(b.len(), 0.005)
}

/// Whether `a` first-order dominates `b`, i.e. `a`'s costs are
/// stochastically smaller: `F_a(x) >= F_b(x) - tol` on every grid point.
pub fn sd1_dominates(
    a: &CostDistribution,
    b: &CostDistribution,
    grid: &[f64],
    tol: f64,
) -> DominanceResult {
    let fa = a.empirical_cdf(grid);
    let fb = b.empirical_cdf(grid);
    let max_violation = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| y - x)
        .fold(f64::NEG_INFINITY, f64::max);
    DominanceResult {
        dominates: max_violation <= tol,
        max_violation,
        tolerance: tol,
    }
}

/// Two-column CSV with a header row.
pub fn write_xy_csv<W: Write>(mut out: W, header: (&str, &str), xs: &[f64], ys: &[f64]) -> Result<()> {
    writeln!(out, "{},{}", header.0, header.1)?;
    for (x, y) in xs.iter().zip(ys) {
        writeln!(out, "{x},{y}")?;
    }
    Ok(())
}
