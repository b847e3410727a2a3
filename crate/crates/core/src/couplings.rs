//! Pair batches `(x_0, x_1)` drawn from a coupling `q(x_0, x_1)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;

use crate::error::{GctmError, Result};
use crate::par;
use crate::points::{squared_distance, Points};
use crate::rng::Rng;

/// Default Sinkhorn iteration cap.
pub const SINKHORN_MAX_ITERS: usize = 10_000;
/// Marginal violation below which Sinkhorn stops.
pub const SINKHORN_TOL: f64 = 1e-6;
/// `tau = DEFAULT_TAU_REL * mean(C)` per batch.
pub const DEFAULT_TAU_REL: f64 = 0.05;
pub const DEFAULT_PERTURB_SCALE: f64 = 0.05;

/// A source of i.i.d. points.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut Rng) -> Points;
}

/// Standard normal in `R^d`.
#[derive(Debug, Clone, Copy)]
pub struct StandardGaussian(pub usize);

impl Sampler for StandardGaussian {
    fn dim(&self) -> usize {
        self.0
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Points {
        crate::rng::standard_normal(n, self.0, rng)
    }
}

/// Aligned rows `(x0[m], x1[m])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub x0: Points,
    pub x1: Points,
}

impl PairBatch {
    pub fn new(x0: Points, x1: Points) -> Result<Self> {
        x0.same_shape(&x1)?;
        if x0.is_empty() {
            return Err(GctmError::shape("empty pair batch"));
        }
        if !x0.is_finite() || !x1.is_finite() {
            return Err(GctmError::non_finite("pair batch"));
        }
        Ok(PairBatch { x0, x1 })
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }

    /// Mean of `|x0 - x1|²` over rows.
    pub fn mean_sq_displacement(&self) -> f64 {
        self.x0
            .rows()
            .zip(self.x1.rows())
            .map(|(a, b)| squared_distance(a, b))
            .sum::<f64>()
            / self.len() as f64
    }
}

/// The operator `H` in `x_1 = H x_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum CorruptionOperator {
    Identity,
    /// Zeroes the listed (0-based) coordinates.
    CoordinateMask(Vec<usize>),
    /// `x_1 = A x_0 + noise * eps` with a square row-major `A`.
    Linear {
        matrix: Vec<f64>,
        dim: usize,
        noise: f64,
    },
}

impl CorruptionOperator {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            CorruptionOperator::Identity => Ok(()),
            CorruptionOperator::CoordinateMask(idx) => match idx.iter().find(|&&i| i >= dim) {
                Some(i) => Err(GctmError::invalid(format!(
                    "mask index {i} out of range for d = {dim}"
                ))),
                None => Ok(()),
            },
            CorruptionOperator::Linear {
                matrix,
                dim: d,
                noise,
            } => {
                if *d != dim || matrix.len() != dim * dim {
                    return Err(GctmError::shape(format!(
                        "operator matrix must be {dim}x{dim}"
                    )));
                }
                if !(*noise >= 0.0) || matrix.iter().any(|v| !v.is_finite()) {
                    return Err(GctmError::invalid(
                        "operator noise must be >= 0 and entries finite",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Whether this is a masking (inpainting-style) operator.
    pub fn is_mask(&self) -> bool {
        matches!(self, CorruptionOperator::CoordinateMask(_))
    }

    /// `H x` without the random noise term.
    pub fn apply_mean(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CorruptionOperator::Identity => out.copy_from_slice(x),
            CorruptionOperator::CoordinateMask(idx) => {
                out.copy_from_slice(x);
                for &i in idx {
                    out[i] = 0.0;
                }
            }
            CorruptionOperator::Linear { matrix, dim, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = matrix[i * dim..(i + 1) * dim]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
        }
    }

    /// `H^T r` for the deterministic part of `H`.
    pub fn apply_adjoint(&self, r: &[f64], out: &mut [f64]) {
        match self {
            CorruptionOperator::Identity | CorruptionOperator::CoordinateMask(_) => {
                self.apply_mean(r, out)
            }
            CorruptionOperator::Linear { matrix, dim, .. } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..*dim).map(|i| matrix[i * dim + j] * r[i]).sum();
                }
            }
        }
    }

    /// Row-wise `H x` without noise.
    pub fn apply_points(&self, x: &Points) -> Points {
        let mut out = x.clone();
        for (o, r) in out.rows_mut().zip(x.rows()) {
            self.apply_mean(r, o);
        }
        out
    }

    /// One fresh draw of `H` applied to `x`.
    pub fn sample_apply(&self, x: &[f64], out: &mut [f64], rng: &mut Rng) {
        self.apply_mean(x, out);
        if let CorruptionOperator::Linear { noise, .. } = self {
            if *noise > 0.0 {
                for o in out.iter_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *o += noise * e;
                }
            }
        }
    }
}

/// Which coupling `q(x_0, x_1)` to draw pairs from.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    Independent,
    /// Entropic OT with `tau = tau_rel * mean(C)` per batch.
    Ot {
        tau_rel: f64,
    },
    Supervised {
        op: CorruptionOperator,
    },
}

impl CouplingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingKind::Independent => "independent",
            CouplingKind::Ot { .. } => "ot",
            CouplingKind::Supervised { .. } => "supervised",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            CouplingKind::Independent => Ok(()),
            CouplingKind::Ot { tau_rel } if *tau_rel > 0.0 && tau_rel.is_finite() => Ok(()),
            CouplingKind::Ot { .. } => Err(GctmError::invalid("OT tau must be positive")),
            CouplingKind::Supervised { op } => op.validate(dim),
        }
    }
}

/// `x0` rows from `q(x_0)`, `x1` rows from `q(x_1)`, independently.
pub fn sample_independent(
    x0: &dyn Sampler,
    x1: &dyn Sampler,
    m: usize,
    rng: &mut Rng,
) -> Result<PairBatch> {
    if m == 0 {
        return Err(GctmError::invalid("batch size must be positive"));
    }
    if x0.dim() != x1.dim() {
        return Err(GctmError::shape("samplers disagree on dimension"));
    }
    let a = x0.sample(m, rng);
    let b = x1.sample(m, rng);
    PairBatch::new(a, b)
}

/// Entropic OT plan between two uniform empirical measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Row-major `M x M`.
    pub plan: Vec<f64>,
    pub m: usize,
    pub tau: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// `sum_i |row_i(P) - 1/M|` after each iteration.
    pub residual_history: Vec<f64>,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.m + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan
            .chunks_exact(self.m)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        for r in self.plan.chunks_exact(self.m) {
            for (a, &b) in c.iter_mut().zip(r) {
                *a += b;
            }
        }
        c
    }

    /// Largest deviation of any row or column sum from `1/M`.
    pub fn max_marginal_violation(&self) -> f64 {
        let target = 1.0 / self.m as f64;
        self.row_sums()
            .into_iter()
            .chain(self.col_sums())
            .map(|s| (s - target).abs())
            .fold(0.0, f64::max)
    }

    /// `<P, C>`.
    pub fn cost(&self, c: &[f64]) -> f64 {
        self.plan.iter().zip(c).map(|(p, c)| p * c).sum()
    }
}

/// `C_ij = |x0_i - x1_j|²`, row-major.
pub fn cost_matrix(x0: &Points, x1: &Points) -> Result<Vec<f64>> {
    if x0.dim() != x1.dim() {
        return Err(GctmError::shape("cost matrix needs matching dimensions"));
    }
    let rows = par::map_indices(x0.len(), |i| {
        x1.rows()
            .map(|b| squared_distance(x0.row(i), b))
            .collect::<Vec<_>>()
    });
    Ok(rows.into_iter().flatten().collect())
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + it.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn for `argmin <P, C> - tau H(P)` with uniform marginals.
pub fn sinkhorn_plan(x0: &Points, x1: &Points, tau: f64) -> Result<TransportPlan> {
    sinkhorn_plan_with(x0, x1, tau, SINKHORN_MAX_ITERS, SINKHORN_TOL)
}

pub fn sinkhorn_plan_with(
    x0: &Points,
    x1: &Points,
    tau: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let c = cost_matrix(x0, x1)?;
    sinkhorn_from_cost(&c, x0.len(), tau, max_iters, tol)
}

/// Ratio between consecutive temperatures of the annealing schedule.
const ANNEAL_FACTOR: f64 = 0.5;
/// Near-tied assignments make plain Sinkhorn contract very slowly at small
/// `tau`. Once the residual ratio passes `NEWTON_STALL`, small problems try a
/// Newton step on the row potential instead; it is kept only if the residual
/// does not grow, so the history stays monotone.
const NEWTON_STALL: f64 = 0.99;
const NEWTON_MAX_M: usize = 64;
/// Loose stopping rule for the intermediate annealing stages.
const ANNEAL_STAGE_ITERS: usize = 200;
const ANNEAL_STAGE_TOL: f64 = 1e-4;

struct Stage {
    iterations: usize,
    converged: bool,
}

/// Alternating log-domain updates of `(f, g)` at a fixed `tau`, warm-started
/// from the given potentials.
#[allow(clippy::too_many_arguments)]
fn sinkhorn_stage(
    c: &[f64],
    m: usize,
    tau: f64,
    f: &mut Vec<f64>,
    g: &mut Vec<f64>,
    max_iters: usize,
    tol: f64,
    history: &mut Vec<f64>,
) -> Stage {
    let log_w = -(m as f64).ln();
    let target = 1.0 / m as f64;
    // Exact column update for a given row potential, then the row deviations.
    let settle = |f_new: Vec<f64>| {
        let g_new: Vec<f64> = par::map_indices(m, |j| {
            tau * log_w - tau * log_sum_exp((0..m).map(|i| (f_new[i] - c[i * m + j]) / tau))
        });
        let rows = par::map_indices(m, |i| {
            log_sum_exp((0..m).map(|j| (f_new[i] + g_new[j] - c[i * m + j]) / tau)).exp()
        });
        let l1: f64 = rows.iter().map(|r| (r - target).abs()).sum();
        (f_new, g_new, rows, l1)
    };
    let mut rows: Option<Vec<f64>> = None;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let prev = history.last().copied().unwrap_or(f64::INFINITY);
        let stalled = matches!(history.as_slice(), [.., a, b] if *b > NEWTON_STALL * a);
        let mut step = None;
        if stalled && m <= NEWTON_MAX_M {
            if let Some(r) = &rows {
                step = newton_rows(c, m, tau, f, g, r)
                    .map(&settle)
                    .filter(|s| s.3 <= prev);
            }
        }
        let (f_new, g_new, r, l1) = step.unwrap_or_else(|| {
            settle(par::map_indices(m, |i| {
                tau * log_w - tau * log_sum_exp((0..m).map(|j| (g[j] - c[i * m + j]) / tau))
            }))
        });
        *f = f_new;
        *g = g_new;
        history.push(l1);
        let max = r.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
        rows = Some(r);
        if max < tol {
            return Stage {
                iterations,
                converged: true,
            };
        }
    }
    Stage {
        iterations,
        converged: false,
    }
}

/// Newton step for the row potential with columns held exact. The Jacobian
/// of the row sums is `(diag(r) - m P P^T) / tau`; it is singular along
/// constant shifts, so the last entry of `df` is pinned to zero.
fn newton_rows(
    c: &[f64],
    m: usize,
    tau: f64,
    f: &[f64],
    g: &[f64],
    rows: &[f64],
) -> Option<Vec<f64>> {
    if m < 2 {
        return None;
    }
    let p: Vec<f64> = (0..m * m)
        .map(|k| ((f[k / m] + g[k % m] - c[k]) / tau).exp())
        .collect();
    let n = m - 1;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let pp: f64 = (0..m).map(|j| p[i * m + j] * p[k * m + j]).sum();
            a[i * n + k] = -(m as f64) * pp / tau;
        }
        a[i * n + i] += rows[i] / tau;
        b[i] = 1.0 / m as f64 - rows[i];
    }
    let df = solve_dense(&mut a, &mut b, n)?;
    Some(
        (0..m)
            .map(|i| f[i] + df.get(i).copied().unwrap_or(0.0))
            .collect(),
    )
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv =
            (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if !(a[piv * n + col].abs() > 1e-300) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let factor = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= factor * a[col * n + k];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Sinkhorn on a precomputed square cost matrix.
///
/// Small temperatures put plain Sinkhorn in a regime where the residual only
/// decays like `1/k`, so `tau` is annealed geometrically from `max C` with
/// warm-started potentials. Every stage shares the `max_iters` budget; the
/// residual history covers the final stage, at the requested `tau`.
pub fn sinkhorn_from_cost(
    c: &[f64],
    m: usize,
    tau: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if m == 0 || c.len() != m * m {
        return Err(GctmError::shape("cost matrix must be M x M with M >= 1"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GctmError::invalid(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let max_c = c.iter().copied().fold(0.0, f64::max);
    let mut schedule = Vec::new();
    let mut t = max_c;
    while t > tau {
        schedule.push(t);
        t *= ANNEAL_FACTOR;
    }
    schedule.push(tau);
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut used = 0;
    let mut history = Vec::new();
    let mut converged = false;
    for (k, &stage_tau) in schedule.iter().enumerate() {
        history.clear();
        let budget = max_iters - used;
        if budget == 0 {
            break;
        }
        let last = k + 1 == schedule.len();
        let (cap, stage_tol) = if last {
            (budget, tol)
        } else {
            (budget.min(ANNEAL_STAGE_ITERS), ANNEAL_STAGE_TOL)
        };
        let stage = sinkhorn_stage(
            c,
            m,
            stage_tau,
            &mut f,
            &mut g,
            cap,
            stage_tol,
            &mut history,
        );
        used += stage.iterations;
        converged = stage.converged && last;
    }
    let plan = (0..m * m)
        .map(|k| ((f[k / m] + g[k % m] - c[k]) / tau).exp())
        .collect();
    Ok(TransportPlan {
        plan,
        m,
        tau,
        iterations_used: used,
        converged,
        residual_history: history,
    })
}

/// Draws `count` index pairs `(i, j)` with probability proportional to `P_ij`.
pub fn sample_plan_indices(
    plan: &TransportPlan,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, usize)>> {
    if plan.plan.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(GctmError::invalid(
            "plan entries must be finite and non-negative",
        ));
    }
    let dist = WeightedIndex::new(&plan.plan)
        .map_err(|e| GctmError::invalid(format!("degenerate transport plan: {e}")))?;
    Ok((0..count)
        .map(|_| {
            let k = dist.sample(rng);
            (k / plan.m, k % plan.m)
        })
        .collect())
}

/// Pairs `(x0[i], x1[j])` for `M` draws of `(i, j) ~ P`.
pub fn sample_ot_pairs(
    plan: &TransportPlan,
    x0: &Points,
    x1: &Points,
    m: usize,
    rng: &mut Rng,
) -> Result<PairBatch> {
    if x0.len() != plan.m || x1.len() != plan.m {
        return Err(GctmError::shape("plan size does not match point sets"));
    }
    let idx = sample_plan_indices(plan, m, rng)?;
    let (ii, jj): (Vec<usize>, Vec<usize>) = idx.into_iter().unzip();
    PairBatch::new(x0.select_rows(&ii), x1.select_rows(&jj))
}

/// Draws `M` pairs from each marginal and re-pairs them by entropic OT.
/// Returns the batch and the plan that produced it.
pub fn sample_ot(
    x0: &dyn Sampler,
    x1: &dyn Sampler,
    m: usize,
    tau_rel: f64,
    rng: &mut Rng,
) -> Result<(PairBatch, TransportPlan)> {
    let base = sample_independent(x0, x1, m, rng)?;
    let c = cost_matrix(&base.x0, &base.x1)?;
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    let tau = (tau_rel * mean).max(f64::MIN_POSITIVE);
    let plan = sinkhorn_from_cost(&c, m, tau, SINKHORN_MAX_ITERS, SINKHORN_TOL)?;
    let batch = sample_ot_pairs(&plan, &base.x0, &base.x1, m, rng)?;
    Ok((batch, plan))
}

/// `x1[m] = H_m x0[m]` with a fresh `H_m` per row.
pub fn sample_supervised(x0: &Points, op: &CorruptionOperator, rng: &mut Rng) -> Result<PairBatch> {
    op.validate(x0.dim())?;
    let mut x1 = x0.clone();
    for (o, r) in x1.rows_mut().zip(x0.rows()) {
        op.sample_apply(r, o, rng);
    }
    PairBatch::new(x0.clone(), x1)
}

/// `x1 <- x1 + scale * eps`, `eps` standard normal per element.
pub fn perturb_x1(batch: &PairBatch, scale: f64, rng: &mut Rng) -> Result<PairBatch> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(GctmError::invalid("perturbation scale must be >= 0"));
    }
    let mut out = batch.clone();
    if scale == 0.0 {
        return Ok(out);
    }
    for v in out.x1.as_mut_slice() {
        let e: f64 = StandardNormal.sample(rng);
        *v += scale * e;
    }
    Ok(out)
}

/// One draw of a training batch under `kind`, before perturbation.
pub fn sample_coupled(
    kind: &CouplingKind,
    x0: &dyn Sampler,
    x1: &dyn Sampler,
    m: usize,
    rng: &mut Rng,
) -> Result<PairBatch> {
    match kind {
        CouplingKind::Independent => sample_independent(x0, x1, m, rng),
        CouplingKind::Ot { tau_rel } => Ok(sample_ot(x0, x1, m, *tau_rel, rng)?.0),
        CouplingKind::Supervised { op } => {
            let data = x0.sample(m, rng);
            sample_supervised(&data, op, rng)
        }
    }
}
