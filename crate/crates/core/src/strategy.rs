//! Strategies as proportions of the final demand, the redistribution
//! matrix that spreads forecast errors over later periods, and the map
//! from `(y, beta, scenario)` to traded volumes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ExecError, Result};
use crate::scenario::ScenarioRef;

const RENORMALIZE_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-12;

/// Proportions `y_i` of the final demand traded in each period.
///
/// Negative entries are admissible; the feasible set only fixes the sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Strategy(Vec<f64>);

impl Strategy {
    /// Accepts `y` whose sum is within `1e-9` of one and rescales it to sum
    /// to one; rejects anything further off.
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(ExecError::InvalidStrategy("no periods".into()));
        }
        if let Some(i) = y.iter().position(|x| !x.is_finite()) {
            return Err(ExecError::InvalidStrategy(format!("entry {i} is not finite")));
        }
        let sum: f64 = y.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(ExecError::InvalidStrategy(format!(
                "proportions sum to {sum}, expected 1"
            )));
        }
        Ok(Strategy(y.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(m: usize) -> Self {
        Strategy(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn periods(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn has_negative(&self) -> bool {
        self.0.iter().any(|&v| v < 0.0)
    }

    /// Rescaled tail of the strategy after `elapsed` periods.
    pub fn continuation(&self, elapsed: usize) -> Result<Strategy> {
        let m = self.periods();
        if elapsed >= m {
            return Err(ExecError::PeriodOutOfRange {
                index: elapsed,
                periods: m,
            });
        }
        if elapsed == 0 {
            return Ok(self.clone());
        }
        let tail = &self.0[elapsed..];
        let s: f64 = tail.iter().sum();
        if s == 0.0 {
            return Err(ExecError::ZeroSuffixSum { period: elapsed });
        }
        Ok(Strategy(tail.iter().map(|v| v / s).collect()))
    }
}

impl TryFrom<Vec<f64>> for Strategy {
    type Error = ExecError;

    fn try_from(y: Vec<f64>) -> Result<Self> {
        Strategy::new(y)
    }
}

impl From<Strategy> for Vec<f64> {
    fn from(s: Strategy) -> Self {
        s.0
    }
}

/// `beta[k][i]`: share of the forecast error revealed after period `k`
/// that is corrected in period `i > k`. Rows `k < m - 1` sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RedistributionMatrix {
    m: usize,
    data: Vec<f64>,
}

impl RedistributionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let bad = |msg: String| Err(ExecError::InvalidRedistribution(msg));
        if m == 0 {
            return bad("empty matrix".into());
        }
        let mut data = Vec::with_capacity(m * m);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != m {
                return bad(format!("row {k} has {} entries, expected {m}", row.len()));
            }
            for (i, &b) in row.iter().enumerate() {
                if !b.is_finite() {
                    return bad(format!("entry ({k}, {i}) is not finite"));
                }
                if i <= k && b != 0.0 {
                    return bad(format!("entry ({k}, {i}) must be zero"));
                }
            }
            if k + 1 < m {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return bad(format!("row {k} sums to {s}, expected 1"));
                }
            }
            data.extend_from_slice(row);
        }
        Ok(RedistributionMatrix { m, data })
    }

    /// Spreads every forecast error proportionally to the remaining
    /// entries of `reference`: `beta[k][i] = y_i / sum_{j > k} y_j`.
    pub fn implied(reference: &Strategy) -> Result<Self> {
        let y = reference.as_slice();
        let m = y.len();
        let mut data = vec![0.0; m * m];
        for k in 0..m.saturating_sub(1) {
            let suffix: f64 = y[k + 1..].iter().sum();
            if suffix == 0.0 {
                return Err(ExecError::ZeroSuffixSum { period: k + 1 });
            }
            for i in k + 1..m {
                data[k * m + i] = y[i] / suffix;
            }
        }
        Ok(RedistributionMatrix { m, data })
    }

    /// `beta[k][i] = 1 / (m - 1 - k)` (implied by the uniform strategy).
    pub fn uniform(m: usize) -> Self {
        Self::implied(&Strategy::uniform(m)).expect("uniform suffix sums are positive")
    }

    pub fn periods(&self) -> usize {
        self.m
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.m + i]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.m).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for RedistributionMatrix {
    type Error = ExecError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        RedistributionMatrix::new(rows)
    }
}

impl From<RedistributionMatrix> for Vec<Vec<f64>> {
    fn from(b: RedistributionMatrix) -> Self {
        b.rows()
    }
}

/// Realized traded volume per period, shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VolumePlan(pub Vec<f64>);

impl VolumePlan {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn check_dims(y: &Strategy, beta: &RedistributionMatrix, scenario: ScenarioRef<'_>) -> Result<()> {
    let m = y.periods();
    for actual in [beta.periods(), scenario.periods(), scenario.delta.len()] {
        if actual != m {
            return Err(ExecError::DimensionMismatch { expected: m, actual });
        }
    }
    Ok(())
}

/// Volumes `n_i = y_i D0 + sum_{k<i} delta_k (y_i + beta[k][i] * Y_k)`
/// where `Y_k` is the cumulative proportion up to and including `k`.
pub fn volumes(
    y: &Strategy,
    beta: &RedistributionMatrix,
    d0: f64,
    scenario: ScenarioRef<'_>,
) -> Result<VolumePlan> {
    check_dims(y, beta, scenario)?;
    let m = y.periods();
    let y = y.as_slice();
    let mut cum = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &v in y {
        acc += v;
        cum.push(acc);
    }
    let n = (0..m)
        .map(|i| {
            let mut ni = y[i] * d0;
            for k in 0..i {
                ni += scenario.delta[k] * (y[i] + beta.get(k, i) * cum[k]);
            }
            ni
        })
        .collect();
    Ok(VolumePlan(n))
}

/// Packed lower-triangular `L(omega)` with `n = L(omega) y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMatrix {
    m: usize,
    /// Row-major lower triangle, row `i` holding columns `0..=i`.
    packed: Vec<f64>,
}

impl VolumeMatrix {
    pub fn periods(&self) -> usize {
        self.m
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn get(&self, i: usize, r: usize) -> f64 {
        if r > i {
            0.0
        } else {
            self.packed[i * (i + 1) / 2 + r]
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, r| self.get(i, r))
    }

    /// `out = L y`.
    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        apply_packed(&self.packed, y, out);
    }

    /// `out = L^T g`.
    pub fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        apply_packed_transpose(&self.packed, g, out);
    }

    /// `L` is invertible iff every forecast `D_{i-1}` on its diagonal is
    /// nonzero.
    pub fn is_nonsingular(&self) -> bool {
        (0..self.m).all(|i| self.get(i, i) != 0.0)
    }
}

pub(crate) fn apply_packed(packed: &[f64], y: &[f64], out: &mut [f64]) {
    let mut o = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let row = &packed[o..o + i + 1];
        *slot = row.iter().zip(y).map(|(a, b)| a * b).sum();
        o += i + 1;
    }
}

pub(crate) fn apply_packed_transpose(packed: &[f64], g: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut o = 0;
    for (i, &gi) in g.iter().enumerate() {
        for r in 0..=i {
            out[r] += packed[o + r] * gi;
        }
        o += i + 1;
    }
}

/// Packs `L(omega)` into `out` (length `m (m + 1) / 2`).
pub(crate) fn fill_volume_matrix(
    beta: &RedistributionMatrix,
    d0: f64,
    delta: &[f64],
    out: &mut [f64],
) {
    let m = beta.periods();
    let mut o = 0;
    let mut forecast = d0;
    for i in 0..m {
        // L[i][r] = sum_{k=r}^{i-1} delta_k beta[k][i], built from k = i-1 down.
        let mut acc = 0.0;
        for r in (0..i).rev() {
            acc += delta[r] * beta.get(r, i);
            out[o + r] = acc;
        }
        out[o + i] = forecast;
        forecast += delta[i];
        o += i + 1;
    }
}

pub fn volume_matrix(
    beta: &RedistributionMatrix,
    d0: f64,
    scenario: ScenarioRef<'_>,
) -> Result<VolumeMatrix> {
    let m = beta.periods();
    if scenario.periods() != m {
        return Err(ExecError::DimensionMismatch {
            expected: m,
            actual: scenario.periods(),
        });
    }
    let mut packed = vec![0.0; m * (m + 1) / 2];
    fill_volume_matrix(beta, d0, scenario.delta, &mut packed);
    Ok(VolumeMatrix { m, packed })
}
