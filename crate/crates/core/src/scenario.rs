//! Joint realizations of price shocks and demand-forecast updates.
//!
//! Path `p` of a set generated with seed `s` is drawn from its own ChaCha8
//! stream (`seed = s`, `stream = p`), so a path's values do not depend on
//! how many paths are generated or on how the work is scheduled. Normals
//! come from the ziggurat sampler of `rand_distr`. Each path consumes `m`
//! draws for the price shocks followed by `m - 1` draws for the forecast
//! updates; scaling by zero deviations keeps the draw sequence aligned, so
//! two markets that differ only in `sigma`/`nu` see the same standard
//! normals.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ExecError, Result};
use crate::market::MarketParams;
use crate::par;

const MAGIC: &[u8; 4] = b"EXSC";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8;

/// One joint realization. `delta[m-1]` is always zero: the demand is
/// known exactly before the last period.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub xi: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Borrowed view of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioRef<'a> {
    pub xi: &'a [f64],
    pub delta: &'a [f64],
}

impl Scenario {
    pub fn new(xi: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        if xi.len() != delta.len() {
            return Err(ExecError::DimensionMismatch {
                expected: xi.len(),
                actual: delta.len(),
            });
        }
        if xi.is_empty() {
            return Err(ExecError::InvalidArgument("empty scenario".into()));
        }
        if *delta.last().unwrap() != 0.0 {
            return Err(ExecError::InvalidArgument(
                "the last forecast update must be zero".into(),
            ));
        }
        Ok(Scenario { xi, delta })
    }

    /// Scenario without any forecast update.
    pub fn price_only(xi: Vec<f64>) -> Self {
        let delta = vec![0.0; xi.len()];
        Scenario { xi, delta }
    }

    pub fn zero(m: usize) -> Self {
        Scenario::price_only(vec![0.0; m])
    }

    pub fn as_ref(&self) -> ScenarioRef<'_> {
        ScenarioRef {
            xi: &self.xi,
            delta: &self.delta,
        }
    }
}

impl<'a> ScenarioRef<'a> {
    pub fn periods(&self) -> usize {
        self.xi.len()
    }

    /// Final demand `d_T = D0 + sum(delta)`.
    pub fn final_demand(&self, d0: f64) -> f64 {
        d0 + self.delta.iter().sum::<f64>()
    }

    pub fn to_owned(&self) -> Scenario {
        Scenario {
            xi: self.xi.to_vec(),
            delta: self.delta.to_vec(),
        }
    }
}

/// Forecast path `D_0, ..., D_m` with `D_i = D_{i-1} + delta_i` and
/// `D_m = D_{m-1} = d_T`.
pub fn demand_path(d0: f64, scenario: ScenarioRef<'_>) -> Vec<f64> {
    let mut path = Vec::with_capacity(scenario.periods() + 1);
    let mut d = d0;
    path.push(d);
    for &delta in scenario.delta {
        d += delta;
        path.push(d);
    }
    path
}

/// A batch of scenarios stored as two `N x m` row-major blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    m: usize,
    seed: u64,
    fingerprint: u64,
    xi: Vec<f64>,
    delta: Vec<f64>,
}

/// Outcome flags of [`ScenarioSet::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub fingerprint_mismatch: bool,
}

impl ScenarioSet {
    /// Draws `n_paths` scenarios from independent normals with the
    /// deviations of `params`.
    pub fn generate(params: &MarketParams, n_paths: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        if n_paths == 0 {
            return Err(ExecError::InvalidArgument("n_paths must be >= 1".into()));
        }
        let m = params.periods();
        let blocks = par::map_chunks(n_paths, par::CHUNK, |range| {
            let mut xi = Vec::with_capacity(range.len() * m);
            let mut delta = Vec::with_capacity(range.len() * m);
            for path in range {
                draw_path(params, seed, path as u64, &mut xi, &mut delta);
            }
            (xi, delta)
        });
        let mut xi = Vec::with_capacity(n_paths * m);
        let mut delta = Vec::with_capacity(n_paths * m);
        for (x, d) in blocks {
            xi.extend_from_slice(&x);
            delta.extend_from_slice(&d);
        }
        Ok(ScenarioSet {
            m,
            seed,
            fingerprint: params.fingerprint(),
            xi,
            delta,
        })
    }

    /// Builds a set from explicit scenarios (fingerprint and seed zero).
    pub fn from_scenarios(scenarios: &[Scenario]) -> Result<Self> {
        let first = scenarios
            .first()
            .ok_or_else(|| ExecError::InvalidArgument("empty scenario list".into()))?;
        let m = first.xi.len();
        let mut xi = Vec::with_capacity(scenarios.len() * m);
        let mut delta = Vec::with_capacity(scenarios.len() * m);
        for s in scenarios {
            if s.xi.len() != m || s.delta.len() != m {
                return Err(ExecError::DimensionMismatch {
                    expected: m,
                    actual: s.xi.len().max(s.delta.len()),
                });
            }
            if s.delta[m - 1] != 0.0 {
                return Err(ExecError::InvalidArgument(
                    "the last forecast update must be zero".into(),
                ));
            }
            xi.extend_from_slice(&s.xi);
            delta.extend_from_slice(&s.delta);
        }
        Ok(ScenarioSet {
            m,
            seed: 0,
            fingerprint: 0,
            xi,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.xi.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn get(&self, index: usize) -> ScenarioRef<'_> {
        let r = index * self.m..(index + 1) * self.m;
        ScenarioRef {
            xi: &self.xi[r.clone()],
            delta: &self.delta[r],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = ScenarioRef<'_>> + '_ {
        self.xi
            .chunks_exact(self.m)
            .zip(self.delta.chunks_exact(self.m))
            .map(|(xi, delta)| ScenarioRef { xi, delta })
    }

    /// First `n` paths of the set.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(ExecError::InvalidArgument(format!(
                "prefix length {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(ScenarioSet {
            xi: self.xi[..n * self.m].to_vec(),
            delta: self.delta[..n * self.m].to_vec(),
            ..self.clone()
        })
    }

    /// Little-endian binary encoding: the header
    /// `{"EXSC", version u32, m u32, N u64, seed u64, fingerprint u64}`
    /// followed by `m` price shocks then `m` forecast updates per path.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(HEADER_LEN + n * 2 * self.m * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        for s in self.iter() {
            for x in s.xi.iter().chain(s.delta) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |msg: String| ExecError::MalformedScenarioFile(msg);
        if bytes.len() < HEADER_LEN {
            return Err(malformed(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(malformed("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(malformed(format!("unsupported version {version}")));
        }
        let m = u32_at(8) as usize;
        let n = u64_at(12) as usize;
        let seed = u64_at(20);
        let fingerprint = u64_at(28);
        if m == 0 || n == 0 {
            return Err(malformed(format!("empty set (m = {m}, N = {n})")));
        }
        let expected = n
            .checked_mul(2 * m * 8)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| malformed("size overflow".into()))?;
        if bytes.len() != expected {
            return Err(malformed(format!(
                "expected {expected} bytes for {n} paths of {m} periods, found {}",
                bytes.len()
            )));
        }
        let mut xi = Vec::with_capacity(n * m);
        let mut delta = Vec::with_capacity(n * m);
        for (p, rec) in bytes[HEADER_LEN..].chunks_exact(2 * m * 8).enumerate() {
            let mut vals = rec
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
            xi.extend(vals.by_ref().take(m));
            delta.extend(vals);
            if delta[(p + 1) * m - 1] != 0.0 {
                return Err(malformed(format!("path {p} has a nonzero final update")));
            }
        }
        Ok(ScenarioSet {
            m,
            seed,
            fingerprint,
            xi,
            delta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Reads a set; when `expected` is given, a fingerprint mismatch is
    /// logged and flagged but does not fail the load.
    pub fn load(
        path: impl AsRef<Path>,
        expected: Option<&MarketParams>,
    ) -> Result<(Self, LoadReport)> {
        let set = Self::from_bytes(&fs::read(path)?)?;
        let mismatch = expected.is_some_and(|p| p.fingerprint() != set.fingerprint);
        if mismatch {
            log::warn!(
                "scenario file fingerprint {:#018x} does not match the market parameters",
                set.fingerprint
            );
        }
        Ok((
            set,
            LoadReport {
                fingerprint_mismatch: mismatch,
            },
        ))
    }
}

fn draw_path(params: &MarketParams, seed: u64, path: u64, xi: &mut Vec<f64>, delta: &mut Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    for &s in &params.sigma {
        let z: f64 = StandardNormal.sample(&mut rng);
        xi.push(s * z);
    }
    for &nu in &params.nu {
        let z: f64 = StandardNormal.sample(&mut rng);
        delta.push(if nu == 0.0 { 0.0 } else { nu * z });
    }
    delta.push(0.0);
}
