//! EDM sigma schedule mapped onto flow-matching time, plus the training-time
//! distributions for `t̂` and the `(t, u, s)` triplet.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{GctmError, Result};

pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
/// Noise-to-data default.
pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
/// Default for supervised image-to-image style couplings.
pub const SUPERVISED_SIGMA_MAX: f64 = 500.0;
pub const DEFAULT_RHO: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            rho: DEFAULT_RHO,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(GctmError::invalid(format!(
                "need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(GctmError::invalid("rho must be positive"));
        }
        Ok(())
    }
}

/// `σ_n = (σ_min^{1/ρ} + (n/N)(σ_max^{1/ρ} - σ_min^{1/ρ}))^ρ` for `n = 0..=N`.
pub fn edm_sigmas(n: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Vec<f64>> {
    ScheduleParams {
        sigma_min,
        sigma_max,
        rho,
    }
    .validate()?;
    if n == 0 {
        return Err(GctmError::invalid("N must be at least 1"));
    }
    let lo = sigma_min.powf(1.0 / rho);
    let hi = sigma_max.powf(1.0 / rho);
    let mut out: Vec<f64> = (0..=n)
        .map(|k| (lo + (k as f64 / n as f64) * (hi - lo)).powf(rho))
        .collect();
    out[0] = sigma_min;
    out[n] = sigma_max;
    Ok(out)
}

/// Flow-matching times for an EDM sigma sequence: interior points map through
/// `σ / (1 + σ)`, the endpoints are pinned to 0 and 1.
pub fn fm_grid(sigmas: &[f64]) -> Vec<f64> {
    let n = sigmas.len() - 1;
    sigmas
        .iter()
        .enumerate()
        .map(|(k, &s)| match k {
            0 => 0.0,
            k if k == n => 1.0,
            _ => s / (1.0 + s),
        })
        .collect()
}

/// A discretization `0 = t_0 < t_1 < ... < t_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
    /// Present when the grid came from an EDM schedule.
    params: Option<ScheduleParams>,
}

impl TimeGrid {
    /// Grid derived from the EDM schedule.
    pub fn edm(n: usize, params: ScheduleParams) -> Result<Self> {
        let sigmas = edm_sigmas(n, params.sigma_min, params.sigma_max, params.rho)?;
        let t = fm_grid(&sigmas);
        check_times(&t)?;
        Ok(TimeGrid {
            t,
            params: Some(params),
        })
    }

    /// `t_n = n / N`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(GctmError::invalid("N must be at least 1"));
        }
        Ok(TimeGrid {
            t: (0..=n).map(|k| k as f64 / n as f64).collect(),
            params: None,
        })
    }

    pub fn from_times(t: Vec<f64>) -> Result<Self> {
        check_times(&t)?;
        Ok(TimeGrid { t, params: None })
    }

    /// Number of intervals `N`.
    pub fn n(&self) -> usize {
        self.t.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn params(&self) -> Option<ScheduleParams> {
        self.params
    }

    /// Index of the grid point equal to `t` (within `1e-12`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.t.iter().position(|&v| (v - t).abs() <= 1e-12)
    }
}

fn check_times(t: &[f64]) -> Result<()> {
    if t.len() < 2 || t[0] != 0.0 || t[t.len() - 1] != 1.0 {
        return Err(GctmError::invalid("grid must start at 0 and end at 1"));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GctmError::invalid("grid must be strictly increasing"));
    }
    Ok(())
}

/// Which `t̂` law the flow-matching loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThatMode {
    /// `t̂ = σ/(1+σ)`, `log σ ~ N(-1.2, 1.2²)`.
    Unconditional,
    /// `t̂ ~ Beta(3, 1)`.
    I2i,
}

impl std::str::FromStr for ThatMode {
    type Err = GctmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconditional" => Ok(ThatMode::Unconditional),
            "i2i" => Ok(ThatMode::I2i),
            _ => Err(GctmError::Parse(format!("unknown that_mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for ThatMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThatMode::Unconditional => "unconditional",
            ThatMode::I2i => "i2i",
        })
    }
}

/// One draw of `t̂`, strictly inside `(0, 1)`.
pub fn sample_that<R: Rng + ?Sized>(mode: ThatMode, rng: &mut R) -> f64 {
    loop {
        let t = match mode {
            ThatMode::Unconditional => {
                let log_sigma: f64 = Normal::new(-1.2, 1.2).expect("valid").sample(rng);
                let sigma = log_sigma.exp();
                sigma / (1.0 + sigma)
            }
            ThatMode::I2i => Beta::new(3.0, 1.0).expect("valid").sample(rng),
        };
        if t > 0.0 && t < 1.0 {
            return t;
        }
    }
}

/// `(t, u, s)` with `0 <= s <= u < t <= 1`, all on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub t: f64,
    pub u: f64,
    pub s: f64,
    /// Grid index of `t`; `u` sits at `index - 1`.
    pub index: usize,
}

/// `t = t_i` with `i` uniform in `1..=N`, `u = t_{i-1}`, `s = t_j` with `j`
/// uniform in `0..i`.
pub fn sample_triplet<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Triplet {
    let i = rng.random_range(1..=grid.n());
    let j = rng.random_range(0..i);
    Triplet {
        t: grid.t[i],
        u: grid.t[i - 1],
        s: grid.t[j],
        index: i,
    }
}

/// `N` over training: starts at `n_start` and doubles `levels - 1` times at
/// evenly spaced iterations, e.g. `4, 8, 16, 32` for four levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NSchedule {
    pub n_start: usize,
    pub levels: usize,
    pub total_iters: usize,
}

impl NSchedule {
    pub fn n_at(&self, iter: usize) -> usize {
        let levels = self.levels.max(1);
        let period = self.total_iters.div_ceil(levels).max(1);
        let k = (iter / period).min(levels - 1);
        self.n_start << k
    }

    pub fn final_n(&self) -> usize {
        self.n_start << (self.levels.max(1) - 1)
    }
}
