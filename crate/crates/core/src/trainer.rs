//! Teacher-free GCTM training.
//!
//! Each iteration draws a coupled batch, evaluates the flow-matching
//! regression loss and the trajectory-consistency loss, takes one Adam step
//! on `L_GCTM + lambda_fm * L_FM` and refreshes the EMA shadow. The ODE step
//! `x_t -> x_u` inside the consistency loss is solved with the EMA network's
//! posterior-mean estimate; the target `G(x_u, u, s)` uses the live weights
//! with the gradient cut.

use std::time::{Duration, Instant};

use crate::couplings::{self, CouplingKind, PairBatch, Sampler};
use crate::error::{GctmError, Result};
use crate::flow::{self, GFunction};
use crate::harness::metrics;
use crate::inference;
use crate::nn::{self, Mlp, OptimizerState, ParamStore, TimeEmbedding};
use crate::points::{squared_distance, Points};
use crate::rng;
use crate::schedule::{self, NSchedule, ScheduleParams, ThatMode, TimeGrid, Triplet};

pub const DEFAULT_LAMBDA_FM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub batch_size: usize,
    pub lambda_fm: f64,
    pub coupling: CouplingKind,
    /// Gaussian perturbation added to `x_1` after the coupling draw.
    pub perturb_scale: f64,
    pub schedule: ScheduleParams,
    pub n_start: usize,
    /// Number of `N` levels: `n_start, 2 n_start, ...`.
    pub doublings: usize,
    pub that_mode: ThatMode,
    pub seed: u64,
    /// Iterations between log rows (each with an eval metric).
    pub eval_every: usize,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Overrides the batch-size learning-rate rule when set.
    pub lr: Option<f64>,
    pub ema_decay: f64,
    pub hidden: Vec<usize>,
    pub embedding: TimeEmbedding,
    /// Samples used by the periodic energy-distance evaluation.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 20_000,
            batch_size: 128,
            lambda_fm: DEFAULT_LAMBDA_FM,
            coupling: CouplingKind::Independent,
            perturb_scale: couplings::DEFAULT_PERTURB_SCALE,
            schedule: ScheduleParams::default(),
            n_start: 4,
            doublings: 4,
            that_mode: ThatMode::Unconditional,
            seed: 0,
            eval_every: 1000,
            checkpoint_every: 0,
            lr: None,
            ema_decay: nn::DEFAULT_EMA_DECAY,
            hidden: vec![256, 256, 256],
            embedding: TimeEmbedding::default(),
            eval_samples: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.schedule.validate()?;
        self.coupling.validate(dim)?;
        if self.batch_size == 0 {
            return Err(GctmError::invalid("batch_size must be positive"));
        }
        if matches!(self.coupling, CouplingKind::Ot { .. }) && self.batch_size < 2 {
            return Err(GctmError::invalid("OT coupling needs batch_size >= 2"));
        }
        if self.n_start == 0 || self.doublings == 0 {
            return Err(GctmError::invalid("n_start and doublings must be positive"));
        }
        if !(self.lambda_fm >= 0.0) || !(self.perturb_scale >= 0.0) {
            return Err(GctmError::invalid(
                "lambda_fm and perturb_scale must be >= 0",
            ));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(GctmError::invalid("ema_decay must lie in (0, 1)"));
        }
        if self.eval_every == 0 {
            return Err(GctmError::invalid("eval_every must be positive"));
        }
        Ok(())
    }

    pub fn n_schedule(&self) -> NSchedule {
        NSchedule {
            n_start: self.n_start,
            levels: self.doublings,
            total_iters: self.total_iters,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or_else(|| nn::default_lr(self.batch_size))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub iter: usize,
    pub gctm_loss: f64,
    pub fm_loss: f64,
    pub total: f64,
    pub grid_n: usize,
    pub wallclock: Duration,
}

/// Value and exact weight gradient of a scalar loss.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `mean_m |x0_m - g(x_t̂, t̂, t̂)|²` with `x_t̂ = (1 - t̂) x0 + t̂ x1`.
pub fn fm_loss(net: &Mlp, batch: &PairBatch, that: &[f64]) -> Result<LossGrad> {
    if that.len() != batch.len() {
        return Err(GctmError::shape("one t̂ per pair required"));
    }
    if let Some(&t) = that.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        return Err(GctmError::invalid(format!("t̂ = {t} outside (0, 1)")));
    }
    let xt = batch.x0.interpolate(&batch.x1, that)?;
    let scale = 1.0 / batch.len() as f64;
    let (_, grads, loss) = net.vjp(&xt, that, that, |i, out, cot| {
        let target = batch.x0.row(i);
        let mut sq = 0.0;
        for ((c, &o), &y) in cot.iter_mut().zip(out).zip(target) {
            let r = o - y;
            *c = 2.0 * r * scale;
            sq += r * r;
        }
        sq * scale
    })?;
    Ok(LossGrad {
        loss,
        grad: grads.weights,
    })
}

/// `x_t` and the stop-gradient target `G_sg(x_{t->u}, u, s)` for each pair.
///
/// `x_{t->u}` is one Heun step of the `ema` posterior-mean field; a step into
/// `u = 0` is the Euler step, which lands on the posterior mean itself.
pub fn gctm_targets<G1, G2>(
    net: &G1,
    ema: &G2,
    batch: &PairBatch,
    triplets: &[Triplet],
) -> Result<(Points, Points)>
where
    G1: GFunction + ?Sized,
    G2: GFunction + ?Sized,
{
    let m = batch.len();
    if triplets.len() != m {
        return Err(GctmError::shape("one triplet per pair required"));
    }
    let t: Vec<f64> = triplets.iter().map(|tr| tr.t).collect();
    let u: Vec<f64> = triplets.iter().map(|tr| tr.u).collect();
    let s: Vec<f64> = triplets.iter().map(|tr| tr.s).collect();
    let xt = batch.x0.interpolate(&batch.x1, &t)?;

    let mean_t = ema.g(&xt, &t, &t)?;
    let mut xu = mean_t.clone();
    let inner: Vec<usize> = (0..m).filter(|&i| u[i] > 0.0).collect();
    if !inner.is_empty() {
        let mut euler = xt.select_rows(&inner);
        let mut v1 = euler.clone();
        for (k, &i) in inner.iter().enumerate() {
            let h = u[i] - t[i];
            for ((e, v), (&x, &g)) in euler
                .row_mut(k)
                .iter_mut()
                .zip(v1.row_mut(k).iter_mut())
                .zip(xt.row(i).iter().zip(mean_t.row(i)))
            {
                *v = (x - g) / t[i];
                *e = x + h * *v;
            }
        }
        let ui: Vec<f64> = inner.iter().map(|&i| u[i]).collect();
        let mean_u = ema.g(&euler, &ui, &ui)?;
        for (k, &i) in inner.iter().enumerate() {
            let h = u[i] - t[i];
            let row = xu.row_mut(i);
            for d in 0..row.len() {
                let v2 = (euler[(k, d)] - mean_u[(k, d)]) / u[i];
                row[d] = xt[(i, d)] + 0.5 * h * (v1[(k, d)] + v2);
            }
        }
    }
    let g_sg = net.g(&xu, &u, &s)?;
    let target = flow::big_g_rows(&xu, &u, &s, &g_sg)?;
    if !target.is_finite() {
        return Err(GctmError::non_finite("consistency target"));
    }
    Ok((xt, target))
}

/// `mean_m d(G_θ(x_t, t, s), G_sg(x_{t->u}, u, s))` without gradients, for
/// any regressor (e.g. an oracle stub).
pub fn gctm_loss_value<G1, G2>(
    net: &G1,
    ema: &G2,
    batch: &PairBatch,
    triplets: &[Triplet],
) -> Result<f64>
where
    G1: GFunction + ?Sized,
    G2: GFunction + ?Sized,
{
    let (xt, target) = gctm_targets(net, ema, batch, triplets)?;
    let t: Vec<f64> = triplets.iter().map(|tr| tr.t).collect();
    let s: Vec<f64> = triplets.iter().map(|tr| tr.s).collect();
    let g = net.g(&xt, &t, &s)?;
    let pred = flow::big_g_rows(&xt, &t, &s, &g)?;
    let d = nn::pseudo_huber(&pred, &target, batch.dim())?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Consistency loss with its gradient through `G_θ(x_t, t, s)` only.
pub fn gctm_loss(
    net: &Mlp,
    ema: &Mlp,
    batch: &PairBatch,
    triplets: &[Triplet],
) -> Result<LossGrad> {
    let (xt, target) = gctm_targets(net, ema, batch, triplets)?;
    let t: Vec<f64> = triplets.iter().map(|tr| tr.t).collect();
    let s: Vec<f64> = triplets.iter().map(|tr| tr.s).collect();
    let c = nn::pseudo_huber_c(batch.dim());
    let scale = 1.0 / batch.len() as f64;
    let (_, grads, loss) = net.vjp(&xt, &t, &s, |i, g, cot| {
        let r = s[i] / t[i];
        let x = xt.row(i);
        let y = target.row(i);
        let mut r2 = 0.0;
        for ((cv, (&gv, &xv)), &yv) in cot.iter_mut().zip(g.iter().zip(x)).zip(y) {
            let diff = r * xv + (1.0 - r) * gv - yv;
            *cv = diff;
            r2 += diff * diff;
        }
        let denom = (r2 + c * c).sqrt();
        for cv in cot.iter_mut() {
            *cv *= (1.0 - r) * scale / denom;
        }
        nn::pseudo_huber_sq(r2, c) * scale
    })?;
    Ok(LossGrad {
        loss,
        grad: grads.weights,
    })
}

/// Parameters, optimizer state and the iteration counter.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParamStore,
    pub opt: OptimizerState,
    pub iter: usize,
}

impl TrainState {
    /// Seeded initialization; draws from stream 0 of `cfg.seed`.
    pub fn init(cfg: &TrainConfig, dim: usize) -> Result<Self> {
        let mut r = rng::stream(cfg.seed, 0);
        let mut params = ParamStore::init(dim, &cfg.hidden, cfg.embedding, &mut r)?;
        params.ema_decay = cfg.ema_decay;
        let opt = OptimizerState::new(params.weights.len(), cfg.learning_rate());
        Ok(TrainState {
            params,
            opt,
            iter: 0,
        })
    }
}

/// Data source `q(x_0)` and source `q(x_1)` of a training run.
pub struct Marginals<'a> {
    pub x0: &'a dyn Sampler,
    pub x1: &'a dyn Sampler,
}

/// One iteration. Randomness comes from stream `iter + 1` of `cfg.seed`, so
/// the step is a pure function of `(state, cfg, iter)`.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    marginals: &Marginals<'_>,
) -> Result<LossReport> {
    let started = Instant::now();
    let k = state.iter;
    let mut r = rng::stream(cfg.seed, k as u64 + 1);
    let n = cfg.n_schedule().n_at(k);
    let grid = TimeGrid::edm(n, cfg.schedule)?;

    let batch = couplings::sample_coupled(
        &cfg.coupling,
        marginals.x0,
        marginals.x1,
        cfg.batch_size,
        &mut r,
    )?;
    let batch = couplings::perturb_x1(&batch, cfg.perturb_scale, &mut r)?;
    let that: Vec<f64> = (0..batch.len())
        .map(|_| schedule::sample_that(cfg.that_mode, &mut r))
        .collect();
    let triplets: Vec<Triplet> = (0..batch.len())
        .map(|_| schedule::sample_triplet(&grid, &mut r))
        .collect();

    let net = state.params.network()?;
    let ema = state.params.ema_network()?;
    let fm = fm_loss(&net, &batch, &that)?;
    let gc = gctm_loss(&net, &ema, &batch, &triplets)?;
    let mut grad = gc.grad;
    for (g, f) in grad.iter_mut().zip(&fm.grad) {
        *g += cfg.lambda_fm * f;
    }
    let total = gc.loss + cfg.lambda_fm * fm.loss;
    if !total.is_finite() {
        return Err(GctmError::non_finite(format!(
            "iteration {k}: gctm_loss = {}, fm_loss = {}, N = {n}",
            gc.loss, fm.loss
        )));
    }
    nn::adam_step(&mut state.params, &mut state.opt, &grad)
        .map_err(|e| GctmError::non_finite(format!("iteration {k}: {e}")))?;
    state.params.ema_update()?;
    state.iter += 1;
    Ok(LossReport {
        iter: k,
        gctm_loss: gc.loss,
        fm_loss: fm.loss,
        total,
        grid_n: n,
        wallclock: started.elapsed(),
    })
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    /// Iterations completed when the row was written.
    pub iter: usize,
    /// Losses averaged over the iterations since the previous row.
    pub gctm_loss: f64,
    pub fm_loss: f64,
    pub total: f64,
    pub n: usize,
    pub metric_name: String,
    pub metric_value: f64,
}

pub const LOG_HEADER: &str = "iter,gctm_loss,fm_loss,total,N,metric_name,metric_value";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            self.gctm_loss,
            self.fm_loss,
            self.total,
            self.n,
            self.metric_name,
            self.metric_value
        )
    }
}

/// Receives log rows and checkpoint opportunities as training progresses.
pub trait TrainObserver {
    fn on_log(&mut self, _row: &LogRow) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Held-out pairs for periodic evaluation, drawn once from `u64::MAX` of the
/// run seed. Outputs `G(x_1, 1, 0)` are compared to `x_0` by energy distance.
pub struct EvalSet {
    pub x0: Points,
    pub x1: Points,
}

impl EvalSet {
    pub fn draw(cfg: &TrainConfig, marginals: &Marginals<'_>) -> Result<Self> {
        let mut r = rng::stream(cfg.seed, u64::MAX);
        let n = cfg.eval_samples.max(2);
        let batch = match &cfg.coupling {
            CouplingKind::Supervised { op } => {
                couplings::sample_supervised(&marginals.x0.sample(n, &mut r), op, &mut r)?
            }
            _ => couplings::sample_independent(marginals.x0, marginals.x1, n, &mut r)?,
        };
        Ok(EvalSet {
            x0: batch.x0,
            x1: batch.x1,
        })
    }

    pub fn energy_distance(&self, params: &ParamStore) -> Result<f64> {
        let out = inference::one_step_sample(params, &self.x1)?;
        metrics::energy_distance(&out, &self.x0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

pub const EVAL_METRIC: &str = "energy_distance";

/// Runs `cfg.total_iters` steps, logging every `eval_every` iterations and
/// checkpointing every `checkpoint_every`.
pub fn train_loop(
    cfg: &TrainConfig,
    marginals: &Marginals<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let dim = marginals.x0.dim();
    if marginals.x1.dim() != dim {
        return Err(GctmError::shape("x0 and x1 samplers disagree on dimension"));
    }
    cfg.validate(dim)?;
    let mut state = TrainState::init(cfg, dim)?;
    let eval = EvalSet::draw(cfg, marginals)?;
    let mut log = Vec::new();
    let (mut sum_g, mut sum_f, mut sum_t, mut count) = (0.0, 0.0, 0.0, 0usize);
    for _ in 0..cfg.total_iters {
        let rep = train_step(&mut state, cfg, marginals)?;
        sum_g += rep.gctm_loss;
        sum_f += rep.fm_loss;
        sum_t += rep.total;
        count += 1;
        let done = state.iter;
        if done % cfg.eval_every == 0 || done == cfg.total_iters {
            let c = count as f64;
            let row = LogRow {
                iter: done,
                gctm_loss: sum_g / c,
                fm_loss: sum_f / c,
                total: sum_t / c,
                n: rep.grid_n,
                metric_name: EVAL_METRIC.to_string(),
                metric_value: eval.energy_distance(&state.params)?,
            };
            observer.on_log(&row)?;
            log.push(row);
            (sum_g, sum_f, sum_t, count) = (0.0, 0.0, 0.0, 0);
        }
        if cfg.checkpoint_every > 0 && (done % cfg.checkpoint_every == 0 || done == cfg.total_iters)
        {
            observer.on_checkpoint(&state)?;
        }
    }
    Ok(TrainOutcome { state, log })
}

/// Mean over pairs of `|x0 - x1|²`; a convenience for coupling diagnostics.
pub fn mean_pair_cost(batch: &PairBatch) -> f64 {
    batch
        .x0
        .rows()
        .zip(batch.x1.rows())
        .map(|(a, b)| squared_distance(a, b))
        .sum::<f64>()
        / batch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::StandardGaussian;
    use crate::oracle::{GaussianSpec, OracleG};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            total_iters: 6,
            batch_size: 16,
            hidden: vec![8, 8],
            embedding: TimeEmbedding {
                num_frequencies: 2,
                scale: 1.0,
            },
            eval_every: 3,
            eval_samples: 50,
            ..Default::default()
        }
    }

    struct Shifted(f64);

    impl Sampler for Shifted {
        fn dim(&self) -> usize {
            2
        }
        fn sample(&self, n: usize, rng: &mut rng::Rng) -> Points {
            let mut p = rng::standard_normal(n, 2, rng);
            p.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = 0.3 * *v + self.0);
            p
        }
    }

    #[test]
    fn fm_loss_of_zero_network() {
        let net = ParamStore::zeros(2, &[4], TimeEmbedding::default())
            .unwrap()
            .network()
            .unwrap();
        let c = Points::repeat(&[1.5, -2.0], 3);
        let batch = PairBatch::new(c.clone(), c).unwrap();
        let l = fm_loss(&net, &batch, &[0.2, 0.5, 0.9]).unwrap();
        assert!((l.loss - (1.5f64 * 1.5 + 4.0)).abs() < 1e-12);
        assert!(fm_loss(&net, &batch, &[0.0, 0.5, 0.9]).is_err());
    }

    #[test]
    fn degenerate_triplet_targets_the_heun_endpoint() {
        let p = TrainState::init(&tiny_cfg(), 2).unwrap().params;
        let net = p.network().unwrap();
        let mut r = rng::seeded(1);
        let batch = PairBatch::new(
            rng::standard_normal(4, 2, &mut r),
            rng::standard_normal(4, 2, &mut r),
        )
        .unwrap();
        let tr = vec![
            Triplet {
                t: 1.0,
                u: 0.0,
                s: 0.0,
                index: 1
            };
            4
        ];
        let (xt, target) = gctm_targets(&net, &net, &batch, &tr).unwrap();
        assert_eq!(xt, batch.x1);
        // x_{1->0} is the Euler step, i.e. g(x_1, 1, 1); G(x, 0, 0) = x.
        let want = net.forward_at(&batch.x1, 1.0, 1.0).unwrap();
        assert_eq!(target, want);
    }

    #[test]
    fn oracle_network_loss_is_at_truncation_floor() {
        let spec = GaussianSpec::data_vs_noise(vec![1.0, -0.5], vec![0.25, 0.5]).unwrap();
        let oracle = OracleG::new(spec.clone());
        let grid = TimeGrid::edm(8, ScheduleParams::default()).unwrap();
        let mut r = rng::seeded(5);
        let m = 64;
        let x0 = {
            let mut z = rng::standard_normal(m, 2, &mut r);
            for row in z.rows_mut() {
                for ((v, mu), var) in row.iter_mut().zip(&spec.mu0).zip(&spec.var0) {
                    *v = mu + var.sqrt() * *v;
                }
            }
            z
        };
        let batch = PairBatch::new(x0, rng::standard_normal(m, 2, &mut r)).unwrap();
        let tr: Vec<Triplet> = (0..m)
            .map(|_| schedule::sample_triplet(&grid, &mut r))
            .collect();
        let loss = gctm_loss_value(&oracle, &oracle, &batch, &tr).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 0.05, "{loss}");
    }

    #[test]
    fn gctm_loss_is_non_negative_and_gradient_consistent() {
        let cfg = tiny_cfg();
        let p = TrainState::init(&cfg, 2).unwrap().params;
        let net = p.network().unwrap();
        let mut r = rng::seeded(2);
        let grid = TimeGrid::edm(4, ScheduleParams::default()).unwrap();
        let batch = PairBatch::new(
            rng::standard_normal(8, 2, &mut r),
            rng::standard_normal(8, 2, &mut r),
        )
        .unwrap();
        let tr: Vec<Triplet> = (0..8)
            .map(|_| schedule::sample_triplet(&grid, &mut r))
            .collect();
        let lg = gctm_loss(&net, &net, &batch, &tr).unwrap();
        let v = gctm_loss_value(&net, &net, &batch, &tr).unwrap();
        assert!(lg.loss >= 0.0);
        assert!((lg.loss - v).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let cfg = TrainConfig {
            total_iters: 0,
            ..tiny_cfg()
        };
        let m = Marginals {
            x0: &Shifted(1.0),
            x1: &StandardGaussian(2),
        };
        let out = train_loop(&cfg, &m, &mut ()).unwrap();
        let init = TrainState::init(&cfg, 2).unwrap();
        assert_eq!(out.state.params, init.params);
        assert!(out.log.is_empty());
    }

    #[test]
    fn identical_seeds_identical_reports() {
        let cfg = tiny_cfg();
        let m = Marginals {
            x0: &Shifted(1.0),
            x1: &StandardGaussian(2),
        };
        let a = train_loop(&cfg, &m, &mut ()).unwrap();
        let b = train_loop(&cfg, &m, &mut ()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.state.params, b.state.params);
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn lambda_zero_total_equals_gctm() {
        let cfg = TrainConfig {
            lambda_fm: 0.0,
            ..tiny_cfg()
        };
        let m = Marginals {
            x0: &Shifted(1.0),
            x1: &StandardGaussian(2),
        };
        let mut st = TrainState::init(&cfg, 2).unwrap();
        let rep = train_step(&mut st, &cfg, &m).unwrap();
        assert_eq!(rep.total, rep.gctm_loss);

        let cfg = tiny_cfg();
        let mut st = TrainState::init(&cfg, 2).unwrap();
        let rep = train_step(&mut st, &cfg, &m).unwrap();
        assert!((rep.total - (rep.gctm_loss + 0.1 * rep.fm_loss)).abs() < 1e-12);
    }

    #[test]
    fn n_trajectory_over_a_run() {
        let cfg = TrainConfig {
            total_iters: 8,
            eval_every: 2,
            ..tiny_cfg()
        };
        let m = Marginals {
            x0: &Shifted(0.0),
            x1: &StandardGaussian(2),
        };
        let out = train_loop(&cfg, &m, &mut ()).unwrap();
        let ns: Vec<usize> = out.log.iter().map(|r| r.n).collect();
        assert_eq!(ns, vec![4, 8, 16, 32]);
    }

    #[test]
    fn checkpoint_failure_aborts_after_logging() {
        struct Failing(Vec<LogRow>);
        impl TrainObserver for Failing {
            fn on_log(&mut self, row: &LogRow) -> Result<()> {
                self.0.push(row.clone());
                Ok(())
            }
            fn on_checkpoint(&mut self, _s: &TrainState) -> Result<()> {
                Err(GctmError::Io(std::io::Error::other("disk full")))
            }
        }
        let cfg = TrainConfig {
            checkpoint_every: 3,
            ..tiny_cfg()
        };
        let m = Marginals {
            x0: &Shifted(0.0),
            x1: &StandardGaussian(2),
        };
        let mut obs = Failing(vec![]);
        assert!(train_loop(&cfg, &m, &mut obs).is_err());
        assert_eq!(obs.0.len(), 1);
    }
}
