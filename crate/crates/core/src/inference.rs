//! Sampling, guided restoration, editing and latent manipulation.

use rand_distr::{Distribution, StandardNormal};

use crate::couplings::{CorruptionOperator, CouplingKind};
use crate::error::{GctmError, Result};
use crate::flow::{self, GFunction};
use crate::nn::{Mlp, ParamStore};
use crate::points::{squared_norm, Points};
use crate::rng::{self, Rng};
use crate::schedule::TimeGrid;

pub const EDIT_T_SUPERVISED: f64 = 0.95;
pub const EDIT_T_INDEPENDENT: f64 = 0.4;
pub const DEFAULT_LAMBDA0: f64 = 1.0;
const ADAPTIVE_EPS: f64 = 1e-8;

/// `G(x_1, 1, 0)` with the EMA weights.
pub fn one_step_sample(params: &ParamStore, x1: &Points) -> Result<Points> {
    one_step(&params.ema_network()?, x1)
}

pub fn one_step<G: GFunction + ?Sized>(g: &G, x1: &Points) -> Result<Points> {
    flow::apply_g(g, x1, 1.0, 0.0)
}

/// `x <- G(x, t_i, t_{i-1})` for `i = N..1` with the EMA weights.
pub fn multistep_sample(params: &ParamStore, x1: &Points, grid: &TimeGrid) -> Result<Points> {
    multistep(&params.ema_network()?, x1, grid)
}

pub fn multistep<G: GFunction + ?Sized>(g: &G, x1: &Points, grid: &TimeGrid) -> Result<Points> {
    let t = grid.times();
    let mut x = x1.clone();
    for i in (1..t.len()).rev() {
        x = flow::apply_g(g, &x, t[i], t[i - 1])?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMethod {
    Dps,
    Cm,
    Gctm,
}

impl std::str::FromStr for GuidanceMethod {
    type Err = GctmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dps" => Ok(GuidanceMethod::Dps),
            "cm" => Ok(GuidanceMethod::Cm),
            "gctm" => Ok(GuidanceMethod::Gctm),
            _ => Err(GctmError::Parse(format!("unknown guidance method '{s}'"))),
        }
    }
}

/// Guidance step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Raw `lambda`.
    Fixed(f64),
    /// `lambda0 / (|x_1 - H x̂_0| + 1e-8)`, per row.
    Adaptive(f64),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Adaptive(DEFAULT_LAMBDA0)
    }
}

impl Lambda {
    fn value(self, residual_norm: f64) -> f64 {
        match self {
            Lambda::Fixed(l) => l,
            Lambda::Adaptive(l0) => l0 / (residual_norm + ADAPTIVE_EPS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub method: GuidanceMethod,
    pub lambda: Lambda,
    pub operator: CorruptionOperator,
    /// `t_0 = 0 < ... < t_M = 1`; `M` is the number of steps.
    pub grid: TimeGrid,
}

impl GuidanceConfig {
    pub fn steps(&self) -> usize {
        self.grid.n()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.operator.validate(dim)?;
        let ok = match self.lambda {
            Lambda::Fixed(l) | Lambda::Adaptive(l) => l >= 0.0 && l.is_finite(),
        };
        if !ok {
            return Err(GctmError::invalid("lambda must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RestoreOutcome {
    /// Final iterate `x'_{t_0}`.
    pub x0: Points,
    /// Per-row `|x_1 - H x'_0|`.
    pub residuals: Vec<f64>,
    /// Row-steps whose guidance gradient was non-finite and therefore dropped.
    pub skipped: usize,
}

impl RestoreOutcome {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn residual(op: &CorruptionOperator, measured: &[f64], x: &[f64]) -> Vec<f64> {
    let mut hx = vec![0.0; x.len()];
    op.apply_mean(x, &mut hx);
    measured.iter().zip(&hx).map(|(m, h)| m - h).collect()
}

/// Zero-shot restoration of `measurement` (one row per output).
///
/// Every step draws fresh noise, re-noises from a clean estimate and then
/// subtracts `lambda * grad_{x'_{t_i}} |x_1 - H x̂_0|²` from `x'_{t_{i-1}}`.
/// DPS estimates `x̂_0 = g(x', t, t)`, CM uses `G(x', t, 0)` for both roles,
/// GCTM re-noises from `g(x', t, t)` and measures with `G(x', t, 0)`.
pub fn restore(
    net: &Mlp,
    measurement: &Points,
    cfg: &GuidanceConfig,
    rng: &mut Rng,
) -> Result<RestoreOutcome> {
    let d = net.data_dim();
    if measurement.dim() != d {
        return Err(GctmError::shape(
            "measurement dimension differs from the model",
        ));
    }
    cfg.validate(d)?;
    let t = cfg.grid.times();
    let n = measurement.len();
    let mut x = rng::standard_normal(n, d, rng);
    let mut skipped = 0;
    for i in (1..t.len()).rev() {
        let (ti, tp) = (t[i], t[i - 1]);
        let eps = rng::standard_normal(n, d, rng);
        let s_hat = if cfg.method == GuidanceMethod::Dps {
            ti
        } else {
            0.0
        };
        let tv = vec![ti; n];
        let sv = vec![s_hat; n];
        // G(x, t, 0) = g(x, t, 0), so every estimate is a plain network call
        // and the residual gradient is a single vector-Jacobian product.
        let (x_hat, grads, _) = net.vjp(&x, &tv, &sv, |row, out, cot| {
            let r = residual(&cfg.operator, measurement.row(row), out);
            cfg.operator.apply_adjoint(&r, cot);
            cot.iter_mut().for_each(|c| *c *= -2.0);
            squared_norm(&r)
        })?;
        let renoise_from = match cfg.method {
            GuidanceMethod::Gctm => net.forward_at(&x, ti, ti)?,
            _ => x_hat.clone(),
        };
        let mut next = Points::zeros(n, d);
        for row in 0..n {
            let res = residual(&cfg.operator, measurement.row(row), x_hat.row(row));
            let lam = cfg.lambda.value(squared_norm(&res).sqrt());
            let grad = grads.input.row(row);
            let usable = grad.iter().all(|v| v.is_finite()) && lam.is_finite();
            if !usable {
                skipped += 1;
            }
            let out = next.row_mut(row);
            for k in 0..d {
                out[k] = (1.0 - tp) * renoise_from[(row, k)] + tp * eps[(row, k)];
                if usable {
                    out[k] -= lam * grad[k];
                }
            }
        }
        x = next;
    }
    let residuals = (0..n)
        .map(|row| squared_norm(&residual(&cfg.operator, measurement.row(row), x.row(row))).sqrt())
        .collect();
    Ok(RestoreOutcome {
        x0: x,
        residuals,
        skipped,
    })
}

/// Default editing time for a coupling.
pub fn default_edit_t(coupling: &CouplingKind) -> f64 {
    match coupling {
        CouplingKind::Supervised { .. } => EDIT_T_SUPERVISED,
        _ => EDIT_T_INDEPENDENT,
    }
}

/// `G(x̂_t, t_edit, 0)` with `x̂_t = (1 - t_edit) Edit(x_0) + t_edit x_1`.
pub fn edit<G, F>(g: &G, x0: &Points, x1: &Points, t_edit: f64, edit_fn: F) -> Result<Points>
where
    G: GFunction + ?Sized,
    F: Fn(&[f64], &mut [f64]),
{
    if !(t_edit > 0.0 && t_edit <= 1.0) {
        return Err(GctmError::invalid(format!(
            "t_edit = {t_edit} outside (0, 1]"
        )));
    }
    x0.same_shape(x1)?;
    let mut edited = x0.clone();
    for (o, r) in edited.rows_mut().zip(x0.rows()) {
        edit_fn(r, o);
    }
    let xt = edited.interpolate(x1, &vec![t_edit; x0.len()])?;
    flow::apply_g(g, &xt, t_edit, 0.0)
}

/// `G(x_1 + gamma * eps, 1, 0)`.
pub fn latent_manip<G: GFunction + ?Sized>(
    g: &G,
    x1: &Points,
    eps: &Points,
    gamma: f64,
) -> Result<Points> {
    x1.same_shape(eps)?;
    let mut z = x1.clone();
    for (v, e) in z.as_mut_slice().iter_mut().zip(eps.as_slice()) {
        *v += gamma * e;
    }
    one_step(g, &z)
}

/// Standard normal draws shaped like `like`.
pub fn noise_like(like: &Points, rng: &mut Rng) -> Points {
    let mut p = like.clone();
    for v in p.as_mut_slice() {
        *v = StandardNormal.sample(rng);
    }
    p
}
