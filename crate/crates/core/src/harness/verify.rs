//! Theorem and property checks shared by `gctm verify` and the test suites.
//!
//! Each check is deterministic (fixed seeds) and reports the measured
//! quantity next to its tolerance.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng as _;

use crate::couplings::{self, DEFAULT_TAU_REL, SINKHORN_MAX_ITERS, SINKHORN_TOL};
use crate::error::Result;
use crate::flow::{self, Solver};
use crate::nn::{Mlp, ParamStore, TimeEmbedding};
use crate::oracle::{self, DiffusionOracle, FmOracle, GaussianSpec};
use crate::points::Points;
use crate::rng::{self, Rng};
use crate::schedule::{self, ScheduleParams, TimeGrid};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Measured worst case (or the statistic being bounded).
    pub value: f64,
    pub bound: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} value={:.3e} bound={} ({:.2?})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.bound,
            self.elapsed
        )
    }
}

fn timed(
    name: &'static str,
    bound: String,
    f: impl FnOnce() -> Result<(f64, bool)>,
) -> Result<CheckOutcome> {
    let start = Instant::now();
    let (value, passed) = f()?;
    Ok(CheckOutcome {
        name,
        passed,
        value,
        bound,
        elapsed: start.elapsed(),
    })
}

fn random_spec(d: usize, r: &mut Rng) -> Result<GaussianSpec> {
    let mut v = |lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| r.random_range(lo..hi)).collect() };
    let mu0 = v(-2.0, 2.0);
    let var0 = v(0.05, 2.0);
    let mu1 = v(-1.0, 1.0);
    let var1 = v(0.5, 1.5);
    GaussianSpec::new(mu0, var0, mu1, var1)
}

/// The two routes to `E[x_1 - x_0 | x_t]` (direct conditioning of the
/// displacement, and `(x_t - E[x_0 | x_t]) / t`) agree at 1000 random points.
pub fn theorem1(points: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 1e-10;
    timed("theorem1_velocity_identity", format!("{TOL:e}"), || {
        let mut r = rng::seeded(101);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let spec = random_spec(3, &mut r)?;
            let t = r.random_range(1e-3..1.0);
            let x = Points::from_vec((0..3).map(|_| r.random_range(-4.0..4.0)).collect(), 3)?;
            let direct = oracle::fm_displacement_mean(&x, t, &spec)?;
            let via_mean = flow::velocity(&x, t, &FmOracle(&spec))?;
            worst = worst.max(direct.max_distance(&via_mean)?);
        }
        Ok((worst, worst < TOL))
    })
}

/// Diffusion posterior mean at `(x, t)` equals the flow-matching posterior
/// mean at `(x / (1 + t), t / (1 + t))` for `t` in `(0, 50]`.
pub fn theorem2_posterior(points: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 1e-12;
    timed("theorem2_posterior_means", format!("{TOL:e}"), || {
        let mut r = rng::seeded(102);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let mu0: Vec<f64> = (0..2).map(|_| r.random_range(-2.0..2.0)).collect();
            let var0: Vec<f64> = (0..2).map(|_| r.random_range(0.05..2.0)).collect();
            let spec = GaussianSpec::data_vs_noise(mu0.clone(), var0.clone())?;
            let t: f64 = 50.0 * (1.0 - r.random::<f64>());
            let scale = (1.0 + t * t).sqrt();
            let x = Points::from_vec(
                (0..2).map(|_| scale * r.random_range(-3.0..3.0)).collect(),
                2,
            )?;
            let diffusion = oracle::diffusion_posterior_mean(&x, t, &mu0, &var0)?;
            let (xb, tp) = flow::ctm_to_gctm(&x, t)?;
            let fm = oracle::fm_posterior_mean(&xb, tp, &spec)?;
            worst = worst.max(diffusion.max_distance(&fm)?);
        }
        Ok((worst, worst < TOL))
    })
}

/// The PFODE trajectory on the EDM sigma grid coincides with the
/// `(1 + sigma)`-scaled flow-matching trajectory on the mapped grid.
pub fn theorem2_trajectory(steps: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 1e-3;
    timed("theorem2_trajectories", format!("{TOL:e}"), || {
        let p = ScheduleParams::default();
        let mu0 = vec![0.8, -1.2];
        let var0 = vec![0.3, 1.7];
        let spec = GaussianSpec::data_vs_noise(mu0.clone(), var0.clone())?;
        let diffusion = DiffusionOracle {
            mu0: &mu0,
            var0: &var0,
        };
        let fm = FmOracle(&spec);
        let sigmas = schedule::edm_sigmas(steps, p.sigma_min, p.sigma_max, p.rho)?;
        let mut r = rng::seeded(103);
        let mut x = rng::standard_normal(16, 2, &mut r);
        x.as_mut_slice().iter_mut().for_each(|v| *v *= p.sigma_max);
        let (mut xb, _) = flow::ctm_to_gctm(&x, p.sigma_max)?;
        let mut worst: f64 = 0.0;
        for w in sigmas.windows(2).rev() {
            let (hi, lo) = (w[1], w[0]);
            x = flow::step(&x, hi, lo, Solver::Heun, &diffusion)?;
            xb = flow::step(&xb, hi / (1.0 + hi), lo / (1.0 + lo), Solver::Heun, &fm)?;
            let (back, _) = flow::gctm_to_ctm(&xb, lo / (1.0 + lo))?;
            worst = worst.max(x.max_distance(&back)?);
        }
        Ok((worst, worst < TOL))
    })
}

/// Minimum of `<C, P>` over permutation plans, divided by `m`.
pub fn brute_force_ot(c: &[f64], m: usize) -> f64 {
    fn go(c: &[f64], m: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == m {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(c, m, row + 1, used, acc + c[row * m + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, m, 0, &mut vec![false; m], 0.0, &mut best);
    best / m as f64
}

/// Sinkhorn at `tau = 1e-3 max C`: marginals within 1e-6, and the plan cost
/// within 1% of the exact optimum, over random problems with `M <= 6`.
pub fn sinkhorn_vs_exact(trials: usize) -> Result<CheckOutcome> {
    timed(
        "sinkhorn_vs_exact_ot",
        "marginals<1e-6, cost gap<1%".into(),
        || {
            let mut r = rng::seeded(104);
            let mut worst_gap: f64 = 0.0;
            let mut worst_marg: f64 = 0.0;
            for _ in 0..trials {
                let m = r.random_range(2..=6);
                let a = rng::standard_normal(m, 2, &mut r);
                let b = rng::standard_normal(m, 2, &mut r);
                let c = couplings::cost_matrix(&a, &b)?;
                let max_c = c.iter().copied().fold(0.0, f64::max);
                let plan = couplings::sinkhorn_from_cost(
                    &c,
                    m,
                    1e-3 * max_c,
                    SINKHORN_MAX_ITERS,
                    SINKHORN_TOL,
                )?;
                let exact = brute_force_ot(&c, m);
                worst_gap = worst_gap.max((plan.cost(&c) - exact) / exact.max(1e-12));
                worst_marg = worst_marg.max(plan.max_marginal_violation());
            }
            Ok((worst_gap, worst_gap < 0.01 && worst_marg < 1e-6))
        },
    )
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Endpoint error of uniform Heun against a 4096-step reference decays at
/// second order over `N = 8, 16, 32, 64`.
pub fn solver_order() -> Result<CheckOutcome> {
    timed("heun_second_order", "[1.8, 2.2]".into(), || {
        let spec = GaussianSpec::data_vs_noise(vec![1.0, -0.5], vec![0.25, 0.5])?;
        let x1 = rng::standard_normal(64, 2, &mut rng::seeded(105));
        let reference = oracle::reference_endpoint(&x1, &spec, oracle::REFERENCE_STEPS)?;
        let ns = [8.0, 16.0, 32.0, 64.0];
        let mut errs = Vec::new();
        for &n in &ns {
            let grid = TimeGrid::uniform(n as usize)?;
            let times: Vec<f64> = grid.times().iter().rev().copied().collect();
            let end = flow::integrate_times(&x1, &times, Solver::Heun, &FmOracle(&spec))?;
            errs.push(end.rms_distance(&reference)?);
        }
        let order = -loglog_slope(&ns, &errs);
        Ok((order, (1.8..=2.2).contains(&order)))
    })
}

/// Worst relative error of one random small network: the
/// backward pass against central differences, weights and inputs.
fn gradient_case(r: &mut Rng) -> Result<f64> {
    let d = r.random_range(1..=3);
    let depth = r.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(2..=6)).collect();
    let emb = TimeEmbedding {
        num_frequencies: r.random_range(1..=3),
        scale: 1.0,
    };
    let net = ParamStore::init(d, &hidden, emb, r)?.network()?;
    let n = r.random_range(1..=3);
    let x = rng::standard_normal(n, d, r);
    let t: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: Vec<f64> = t.iter().map(|&ti| ti * r.random::<f64>()).collect();
    let cot = rng::standard_normal(n, d, r);
    let g = net.backward(&x, &t, &s, &cot)?;
    let dot = |y: &Points| {
        y.as_slice()
            .iter()
            .zip(cot.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let objective_w = |w: &[f64]| -> Result<f64> {
        Ok(dot(
            &Mlp::new(net.layer_dims().to_vec(), emb, w.to_vec())?.forward(&x, &t, &s)?
        ))
    };
    let objective_x = |xp: &Points| -> Result<f64> { Ok(dot(&net.forward(xp, &t, &s)?)) };
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-5);
    let mut worst: f64 = 0.0;
    for i in 0..net.param_count() {
        let mut w = net.weights().to_vec();
        w[i] += h;
        let fp = objective_w(&w)?;
        w[i] -= 2.0 * h;
        let fm = objective_w(&w)?;
        worst = worst.max(rel(g.weights[i], (fp - fm) / (2.0 * h)));
    }
    for i in 0..x.as_slice().len() {
        let mut xp = x.clone();
        xp.as_mut_slice()[i] += h;
        let fp = objective_x(&xp)?;
        xp.as_mut_slice()[i] -= 2.0 * h;
        let fm = objective_x(&xp)?;
        worst = worst.max(rel(g.input.as_slice()[i], (fp - fm) / (2.0 * h)));
    }
    Ok(worst)
}

/// Backward pass against central differences on random small networks.
pub fn gradient_integrity(configs: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 1e-4;
    timed("gradient_integrity", format!("{TOL:e}"), || {
        let mut r = rng::seeded(106);
        let mut worst: f64 = 0.0;
        for _ in 0..configs {
            worst = worst.max(gradient_case(&mut r)?);
        }
        Ok((worst, worst < TOL))
    })
}

/// `G(x, t, t) = x` bit for bit, including `t = 0`.
pub fn boundary_identity(points: usize) -> Result<CheckOutcome> {
    timed("boundary_identity", "exact".into(), || {
        let mut r = rng::seeded(107);
        let net = ParamStore::init(2, &[32, 32], TimeEmbedding::default(), &mut r)?.network()?;
        let mut x = rng::standard_normal(points, 2, &mut r);
        x.as_mut_slice().iter_mut().for_each(|v| *v *= 10.0);
        let mut t: Vec<f64> = (0..points).map(|_| r.random::<f64>()).collect();
        t[0] = 0.0;
        t[points.min(2) - 1] = 1.0;
        let g = net.forward(&x, &t, &t)?;
        let big = flow::big_g_rows(&x, &t, &t, &g)?;
        let mismatches = big
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
        Ok((mismatches as f64, mismatches == 0))
    })
}

/// Every Sinkhorn residual history is non-increasing, and the OT coupling
/// never transports farther on average than the independent pairing.
pub fn coupling_properties(trials: usize) -> Result<CheckOutcome> {
    timed(
        "ot_coupling_properties",
        "monotone, cost<=indep".into(),
        || {
            let mut r = rng::seeded(108);
            let mut ok = true;
            let mut worst_ratio: f64 = 0.0;
            for _ in 0..trials {
                let m = r.random_range(4..=32);
                let a = rng::standard_normal(m, 2, &mut r);
                let mut b = rng::standard_normal(m, 2, &mut r);
                b.as_mut_slice().iter_mut().for_each(|v| *v += 1.5);
                let c = couplings::cost_matrix(&a, &b)?;
                let mean_c = c.iter().sum::<f64>() / c.len() as f64;
                let plan = couplings::sinkhorn_from_cost(
                    &c,
                    m,
                    DEFAULT_TAU_REL * mean_c,
                    SINKHORN_MAX_ITERS,
                    SINKHORN_TOL,
                )?;
                ok &= plan
                    .residual_history
                    .windows(2)
                    .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
                worst_ratio = worst_ratio.max(plan.cost(&c) / mean_c);
            }
            Ok((worst_ratio, ok && worst_ratio <= 1.0))
        },
    )
}

/// The full suite at the sizes used by `gctm verify`.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        theorem1(1000)?,
        theorem2_posterior(1000)?,
        theorem2_trajectory(4096)?,
        sinkhorn_vs_exact(50)?,
        solver_order()?,
        gradient_integrity(100)?,
        boundary_identity(10_000)?,
        coupling_properties(20)?,
    ])
}
