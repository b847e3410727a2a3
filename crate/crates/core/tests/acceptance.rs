//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Training criteria read the configs in
//! `configs/` at the workspace root, and the training-smoke threshold is
//! the committed `configs/pilot_thresholds.cfg`.
//!
//! Runtimes assume one desktop core with the optimized test profile. The
//! whole suite takes roughly 15 minutes, dominated by the four training runs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gctm::couplings::{
    self, CorruptionOperator, CouplingKind, Sampler, StandardGaussian, SINKHORN_MAX_ITERS,
    SINKHORN_TOL,
};
use gctm::flow::{self, Solver};
use gctm::harness::config::{parse_pairs, RunConfig};
use gctm::harness::datasets::Dataset;
use gctm::harness::{metrics, verify};
use gctm::inference::{self, GuidanceConfig, GuidanceMethod, Lambda};
use gctm::nn::ParamStore;
use gctm::oracle::{FmOracle, GaussianSpec};
use gctm::schedule::TimeGrid;
use gctm::trainer::{self, Marginals, TrainOutcome};
use gctm::{rng, Points, Result};
use rand::Rng as _;

struct Verdict {
    value: String,
    bound: String,
    passed: bool,
}

impl Verdict {
    fn below(value: f64, bound: f64) -> Self {
        Verdict {
            value: format!("{value:.4e}"),
            bound: format!("< {bound:e}"),
            passed: value < bound,
        }
    }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_config(name: &str) -> Result<RunConfig> {
    RunConfig::from_file(&configs_dir().join(name))
}

fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = cfg.load_dataset()?;
    let noise = StandardGaussian(data.dim());
    trainer::train_loop(
        &cfg.train,
        &Marginals {
            x0: &data,
            x1: &noise,
        },
        &mut (),
    )
}

fn final_metric(out: &TrainOutcome) -> f64 {
    out.log.last().map_or(f64::NAN, |r| r.metric_value)
}

fn from_check(c: verify::CheckOutcome) -> Verdict {
    Verdict {
        value: format!("{:.4e}", c.value),
        bound: c.bound,
        passed: c.passed,
    }
}

fn theorem1() -> Result<Verdict> {
    verify::theorem1(1000).map(from_check)
}

fn theorem2_posterior() -> Result<Verdict> {
    verify::theorem2_posterior(1000).map(from_check)
}

fn theorem2_trajectory() -> Result<Verdict> {
    verify::theorem2_trajectory(4096).map(from_check)
}

/// Exact optimum over permutation plans by enumerating all `m!` orders.
fn exact_assignment(c: &[f64], m: usize) -> f64 {
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    let cost = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| c[i * m + j])
            .sum::<f64>()
    };
    // Heap's algorithm, iterative form.
    let mut counters = vec![0; m];
    best = best.min(cost(&perm));
    let mut i = 0;
    while i < m {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(cost(&perm));
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    best / m as f64
}

fn sinkhorn() -> Result<Verdict> {
    let mut r = rng::seeded(4);
    let (mut gap, mut marginal): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let m = r.random_range(2..=6);
        let a = rng::standard_normal(m, 2, &mut r);
        let b = rng::standard_normal(m, 2, &mut r);
        let c = couplings::cost_matrix(&a, &b)?;
        let max_c = c.iter().copied().fold(0.0, f64::max);
        let plan =
            couplings::sinkhorn_from_cost(&c, m, 1e-3 * max_c, SINKHORN_MAX_ITERS, SINKHORN_TOL)?;
        let exact = exact_assignment(&c, m);
        gap = gap.max((plan.cost(&c) - exact) / exact);
        marginal = marginal.max(plan.max_marginal_violation());
    }
    Ok(Verdict {
        value: format!("gap {:.3}% marginals {marginal:.2e}", 100.0 * gap),
        bound: "gap < 1%, marginals < 1e-6".into(),
        passed: gap < 0.01 && marginal < 1e-6,
    })
}

/// Heun against the closed-form flow map. For independent diagonal Gaussians
/// the ODE moves each coordinate along `m_t + sqrt(v_t / v_1) (x_1 - m_1)`
/// with `m_t = (1-t) mu0 + t mu1` and `v_t = (1-t)^2 v0 + t^2 v1`.
fn solver_order() -> Result<Verdict> {
    let (mu0, var0) = ([1.0, -0.5], [0.25, 0.5]);
    let spec = GaussianSpec::data_vs_noise(mu0.to_vec(), var0.to_vec())?;
    let x1 = rng::standard_normal(64, 2, &mut rng::seeded(5));
    let mut exact = x1.clone();
    for row in exact.rows_mut() {
        for ((v, mu), var) in row.iter_mut().zip(mu0).zip(var0) {
            *v = mu + var.sqrt() * *v;
        }
    }
    let ns = [8.0, 16.0, 32.0, 64.0];
    let mut errs = Vec::new();
    for &n in &ns {
        let grid = TimeGrid::uniform(n as usize)?;
        let times: Vec<f64> = grid.times().iter().rev().copied().collect();
        let end = flow::integrate_times(&x1, &times, Solver::Heun, &FmOracle(&spec))?;
        errs.push(end.rms_distance(&exact)?);
    }
    let lx: Vec<f64> = ns.iter().map(|v: &f64| v.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 4.0, ly.iter().sum::<f64>() / 4.0);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let order = -num / den;
    Ok(Verdict {
        value: format!("{order:.3}"),
        bound: "[1.8, 2.2]".into(),
        passed: (1.8..=2.2).contains(&order),
    })
}

fn gradient_integrity() -> Result<Verdict> {
    verify::gradient_integrity(100).map(from_check)
}

fn boundary_identity() -> Result<Verdict> {
    verify::boundary_identity(10_000).map(from_check)
}

fn eight_gaussians() -> &'static (RunConfig, TrainOutcome) {
    static MODEL: OnceLock<(RunConfig, TrainOutcome)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = load_config("eight_gaussians.cfg").expect("eight_gaussians.cfg");
        let out = train(&cfg).expect("training run");
        (cfg, out)
    })
}

fn training_smoke() -> Result<Verdict> {
    let text = std::fs::read_to_string(configs_dir().join("pilot_thresholds.cfg"))?;
    let threshold: f64 = parse_pairs(&text)?
        .get("eight_gaussians_energy_distance")
        .ok_or_else(|| gctm::GctmError::Parse("missing eight_gaussians_energy_distance".into()))?
        .parse()
        .map_err(|_| gctm::GctmError::Parse("bad threshold".into()))?;
    let (cfg, out) = eight_gaussians();
    let trained = final_metric(out);
    // The untrained network is the floor the threshold must sit well below.
    let init = ParamStore::init(
        2,
        &cfg.train.hidden,
        cfg.train.embedding,
        &mut rng::stream(cfg.train.seed, 0),
    )?;
    let data = cfg.load_dataset()?;
    let eval = trainer::EvalSet::draw(
        &cfg.train,
        &Marginals {
            x0: &data,
            x1: &StandardGaussian(2),
        },
    )?;
    let untrained = eval.energy_distance(&init)?;
    Ok(Verdict {
        value: format!("{trained:.4} (untrained {untrained:.3})"),
        bound: format!("<= {threshold:.4}"),
        passed: trained <= threshold && threshold < 0.25 * untrained,
    })
}

fn coupling_claim() -> Result<Verdict> {
    let base = load_config("coupling_n4.cfg")?;
    let mut metric = Vec::new();
    for kind in [
        CouplingKind::Independent,
        CouplingKind::Ot {
            tau_rel: couplings::DEFAULT_TAU_REL,
        },
    ] {
        let mut cfg = base.clone();
        cfg.train.coupling = kind;
        metric.push(final_metric(&train(&cfg)?));
    }
    Ok(Verdict {
        value: format!("ot {:.4} vs independent {:.4}", metric[1], metric[0]),
        bound: "ot < independent".into(),
        passed: metric[1] < metric[0],
    })
}

/// Posterior of the hidden coordinate by rejection: keep draws whose observed
/// coordinate lands within `band` of the measurement.
fn rejection_posterior(data: &Dataset, observed: f64, band: f64, seed: u64) -> Points {
    let pool = data.sample(400_000, &mut rng::seeded(seed));
    let kept: Vec<f64> = pool
        .rows()
        .filter(|r| (r[0] - observed).abs() < band)
        .map(|r| r[1])
        .collect();
    Points::from_vec(kept, 1).expect("one column")
}

const RESTORE_STEPS: usize = 32;
const RESTORE_LAMBDA: f64 = 1.0;

fn restoration() -> Result<Verdict> {
    let (cfg, out) = eight_gaussians();
    let net = out.state.params.ema_network()?;
    let n = 1000;
    let observed = 2.0;
    let measurement = Points::repeat(&[observed, 0.0], n);
    let guidance = GuidanceConfig {
        method: GuidanceMethod::Gctm,
        lambda: Lambda::Fixed(RESTORE_LAMBDA),
        operator: CorruptionOperator::CoordinateMask(vec![1]),
        grid: TimeGrid::edm(RESTORE_STEPS, cfg.train.schedule)?,
    };
    let restored = inference::restore(&net, &measurement, &guidance, &mut rng::seeded(10))?;
    let residual = metrics::measurement_residual(&restored.x0, &measurement, &guidance.operator)?;
    let hidden = Points::from_vec(restored.x0.column(1), 1)?;
    let posterior = rejection_posterior(&cfg.load_dataset()?, observed, 0.02, 11);
    let sw = metrics::sliced_wasserstein(&hidden, &posterior, 16, 12)?;
    Ok(Verdict {
        value: format!("residual {residual:.4}, sliced W2 {sw:.4}"),
        bound: "residual < 1e-2, sliced W2 < 0.1".into(),
        passed: residual < 1e-2 && sw < 0.1,
    })
}

/// Closed-form `E[x_0 | x_t]` for independent diagonal Gaussians.
fn gaussian_posterior_mean(x: &[f64], t: f64, mu0: &[f64], var0: &[f64], var1: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let var_t = (1.0 - t).powi(2) * var0[k] + t * t * var1;
            let m_t = (1.0 - t) * mu0[k];
            mu0[k] + (1.0 - t) * var0[k] / var_t * (x[k] - m_t)
        })
        .collect()
}

fn fm_convergence() -> Result<Verdict> {
    let cfg = load_config("gaussian_toy.cfg")?;
    let (mu0, var0) = match &cfg.dataset {
        gctm::harness::config::DatasetSpec::Gaussian { mean, var } => (mean.clone(), var.clone()),
        other => panic!("gaussian_toy.cfg must use the gaussian dataset, got {other:?}"),
    };
    let out = train(&cfg)?;
    let net = out.state.params.ema_network()?;
    // Training perturbs x_1 by `perturb_scale * eps`, so the effective noise
    // variance is 1 + scale^2.
    let var1 = 1.0 + cfg.train.perturb_scale.powi(2);
    let data = cfg.load_dataset()?;
    let mut r = rng::seeded(13);
    let (mut se, mut count) = (0.0, 0usize);
    for k in 1..=19 {
        let t = 0.05 * k as f64;
        let x0 = data.sample(200, &mut r);
        let x1 = StandardGaussian(2).sample(200, &mut r);
        let xt = x0.interpolate(&x1, &[t; 200])?;
        let g = net.forward_at(&xt, t, t)?;
        for (row, got) in xt.rows().zip(g.rows()) {
            let want = gaussian_posterior_mean(row, t, &mu0, &var0, var1);
            se += got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / 2.0;
            count += 1;
        }
    }
    Ok(Verdict::below((se / count as f64).sqrt(), 0.05))
}

type Criterion = (&'static str, Option<Duration>, fn() -> Result<Verdict>);

fn main() -> ExitCode {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria: [Criterion; 11] = [
        ("theorem1_velocity_identity", secs(1), theorem1),
        ("theorem2_posterior_means", secs(1), theorem2_posterior),
        ("theorem2_trajectories", secs(10), theorem2_trajectory),
        ("sinkhorn_vs_exact_ot", secs(5), sinkhorn),
        ("heun_second_order", secs(10), solver_order),
        ("gradient_integrity", secs(30), gradient_integrity),
        ("boundary_identity", None, boundary_identity),
        ("training_smoke_8gaussians", secs(20 * 60), training_smoke),
        ("ot_beats_independent_n4", secs(40 * 60), coupling_claim),
        ("restoration_gctm_mask", secs(5 * 60), restoration),
        ("fm_posterior_mean_gaussian", None, fm_convergence),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_budget = budget.is_none_or(|b| elapsed <= b);
        let line = match result {
            Ok(v) => {
                let ok = v.passed && in_budget;
                failed += usize::from(!ok);
                format!(
                    "{} {:>2} {name}: {} (bound {})",
                    if ok { "PASS" } else { "FAIL" },
                    i + 1,
                    v.value,
                    v.bound
                )
            }
            Err(e) => {
                failed += 1;
                format!("FAIL {:>2} {name}: error: {e}", i + 1)
            }
        };
        let budget = budget.map_or(String::new(), |b| format!(" / {:.0?}", b));
        println!("{line} [{elapsed:.2?}{budget}]");
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
