//! Flow-matching ODE machinery.
//!
//! The ODE is written in posterior-mean form,
//! `dx_t = (x_t - E[x_0 | x_t]) / t dt`, and its solution map is
//! parametrized as `G(x, t, s) = (s/t) x + (1 - s/t) g(x, t, s)`. The velocity
//! is singular at `t = 0`, so integration never evaluates it there: the last
//! hop into `t = 0` goes through an endpoint map instead.

use crate::error::{GctmError, Result};
use crate::nn::Mlp;
use crate::points::Points;
use crate::schedule::TimeGrid;

/// Anything that estimates `E[x_0 | x_t]`.
pub trait VelocityField: Sync {
    /// Posterior mean for every row, each at its own time.
    fn posterior_mean(&self, x: &Points, t: &[f64]) -> Result<Points>;

    /// Exact `G(x, t, 0)` when the field knows it. The default `None` makes
    /// the final hop an Euler step, which lands on the posterior mean.
    fn endpoint(&self, _x: &Points, _t: &[f64]) -> Option<Result<Points>> {
        None
    }
}

/// A raw regressor `g(x, t, s)`.
pub trait GFunction: Sync {
    fn g(&self, x: &Points, t: &[f64], s: &[f64]) -> Result<Points>;
}

impl GFunction for Mlp {
    fn g(&self, x: &Points, t: &[f64], s: &[f64]) -> Result<Points> {
        self.forward(x, t, s)
    }
}

/// Uses `g(x, t, t)` of a network as the posterior mean.
pub struct NetworkField<'a, G: GFunction + ?Sized>(pub &'a G);

impl<G: GFunction + ?Sized> VelocityField for NetworkField<'_, G> {
    fn posterior_mean(&self, x: &Points, t: &[f64]) -> Result<Points> {
        self.0.g(x, t, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Euler,
    Heun,
}

impl std::str::FromStr for Solver {
    type Err = GctmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "heun" => Ok(Solver::Heun),
            _ => Err(GctmError::Parse(format!("unknown solver '{s}'"))),
        }
    }
}

fn check_times_positive(t: &[f64]) -> Result<()> {
    if let Some(&bad) = t.iter().find(|&&v| !(v > 0.0)) {
        return Err(GctmError::invalid(format!(
            "velocity is singular at t = {bad}"
        )));
    }
    Ok(())
}

/// `(x - E[x_0 | x_t]) / t`, per-row times.
pub fn velocity_rows(
    x: &Points,
    t: &[f64],
    field: &(impl VelocityField + ?Sized),
) -> Result<Points> {
    check_times_positive(t)?;
    let mean = field.posterior_mean(x, t)?;
    x.same_shape(&mean)?;
    let mut v = x.clone();
    for ((row, m), &tm) in v.rows_mut().zip(mean.rows()).zip(t) {
        for (a, &b) in row.iter_mut().zip(m) {
            *a = (*a - b) / tm;
        }
    }
    Ok(v)
}

/// `(x - E[x_0 | x_t]) / t` at a shared time.
pub fn velocity(x: &Points, t: f64, field: &(impl VelocityField + ?Sized)) -> Result<Points> {
    velocity_rows(x, &vec![t; x.len()], field)
}

/// `G(x, t, s) = (s/t) x + (1 - s/t) g` with per-row times. Rows with
/// `s == t` return `x` exactly, including `t = s = 0`.
pub fn big_g_rows(x: &Points, t: &[f64], s: &[f64], g_value: &Points) -> Result<Points> {
    x.same_shape(g_value)?;
    if t.len() != x.len() || s.len() != x.len() {
        return Err(GctmError::shape("one (t, s) pair per row required"));
    }
    let mut out = x.clone();
    for (((row, g), &tm), &sm) in out.rows_mut().zip(g_value.rows()).zip(t).zip(s) {
        if !(0.0 <= sm && sm <= tm) {
            return Err(GctmError::invalid(format!(
                "need 0 <= s <= t, got s = {sm}, t = {tm}"
            )));
        }
        if sm == tm {
            continue;
        }
        let r = sm / tm;
        for (a, &gk) in row.iter_mut().zip(g) {
            *a = r * *a + (1.0 - r) * gk;
        }
    }
    Ok(out)
}

pub fn big_g(x: &Points, t: f64, s: f64, g_value: &Points) -> Result<Points> {
    if t <= 0.0 && s != t {
        return Err(GctmError::invalid("G is undefined for t = 0"));
    }
    big_g_rows(x, &vec![t; x.len()], &vec![s; x.len()], g_value)
}

/// `G(x, t, s)` from a regressor.
pub fn apply_g<G: GFunction + ?Sized>(net: &G, x: &Points, t: f64, s: f64) -> Result<Points> {
    let n = x.len();
    let (tv, sv) = (vec![t; n], vec![s; n]);
    let g = net.g(x, &tv, &sv)?;
    big_g_rows(x, &tv, &sv, &g)
}

/// One solver step from `t` to `t_next < t`. A step into `t_next = 0` uses
/// the field's endpoint map if it has one, otherwise an Euler step.
pub fn step(
    x: &Points,
    t: f64,
    t_next: f64,
    solver: Solver,
    field: &(impl VelocityField + ?Sized),
) -> Result<Points> {
    let n = x.len();
    if t_next == 0.0 {
        if let Some(end) = field.endpoint(x, &vec![t; n]) {
            return end;
        }
    }
    let h = t_next - t;
    let v1 = velocity(x, t, field)?;
    let mut euler = x.clone();
    for (a, &v) in euler.as_mut_slice().iter_mut().zip(v1.as_slice()) {
        *a += h * v;
    }
    if solver == Solver::Euler || t_next == 0.0 {
        return Ok(euler);
    }
    let v2 = velocity(&euler, t_next, field)?;
    let mut out = x.clone();
    for ((a, &p), &q) in out
        .as_mut_slice()
        .iter_mut()
        .zip(v1.as_slice())
        .zip(v2.as_slice())
    {
        *a += 0.5 * h * (p + q);
    }
    Ok(out)
}

/// Integrates through a strictly decreasing sequence of times, returning the
/// state at the last one.
pub fn integrate_times(
    x: &Points,
    times: &[f64],
    solver: Solver,
    field: &(impl VelocityField + ?Sized),
) -> Result<Points> {
    if times.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(GctmError::invalid(
            "integration times must be strictly decreasing",
        ));
    }
    let mut cur = x.clone();
    for w in times.windows(2) {
        cur = step(&cur, w[0], w[1], solver, field)?;
    }
    Ok(cur)
}

/// A traversal `t_from -> t_to` along a grid.
#[derive(Debug, Clone)]
pub struct TraversalRequest<'a> {
    pub x: &'a Points,
    pub t_from: f64,
    pub t_to: f64,
    pub grid: &'a TimeGrid,
    pub solver: Solver,
}

fn snap(grid: &TimeGrid, t: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GctmError::invalid(format!("time {t} outside [0, 1]")));
    }
    let times = grid.times();
    Ok((0..times.len())
        .min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs()))
        .expect("grid is non-empty"))
}

/// Steps through consecutive grid points from `t_from` down to `t_to`
/// (both snapped to the nearest grid point).
pub fn integrate(
    req: &TraversalRequest<'_>,
    field: &(impl VelocityField + ?Sized),
) -> Result<Points> {
    let from = snap(req.grid, req.t_from)?;
    let to = snap(req.grid, req.t_to)?;
    if to > from {
        return Err(GctmError::invalid(format!(
            "traversal must move backward in time ({} -> {})",
            req.t_from, req.t_to
        )));
    }
    let times: Vec<f64> = req.grid.times()[to..=from].iter().rev().copied().collect();
    integrate_times(req.x, &times, req.solver, field)
}

/// Diffusion `(x, t)` to flow-matching `(x / (1 + t), t / (1 + t))`.
pub fn ctm_to_gctm(x: &Points, t: f64) -> Result<(Points, f64)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(GctmError::invalid(format!(
            "diffusion time must be in (0, inf), got {t}"
        )));
    }
    let mut xb = x.clone();
    xb.as_mut_slice().iter_mut().for_each(|v| *v /= 1.0 + t);
    Ok((xb, t / (1.0 + t)))
}

/// Inverse of [`ctm_to_gctm`].
pub fn gctm_to_ctm(x_bar: &Points, t_prime: f64) -> Result<(Points, f64)> {
    if !(t_prime > 0.0 && t_prime < 1.0) {
        return Err(GctmError::invalid(format!(
            "flow time must be in (0, 1), got {t_prime}"
        )));
    }
    let t = t_prime / (1.0 - t_prime);
    let mut x = x_bar.clone();
    x.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0 + t);
    Ok((x, t))
}

/// Probability-flow ODE velocity `(x - E_p[x_0 | x_t]) / t` for the diffusion
/// kernel `N(x_0, t² I)`; `field` supplies the diffusion posterior mean.
pub fn pfode_velocity(x: &Points, t: f64, field: &(impl VelocityField + ?Sized)) -> Result<Points> {
    velocity(x, t, field)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Mean<F: Fn(&[f64], f64) -> Vec<f64> + Sync>(F);

    impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> VelocityField for Mean<F> {
        fn posterior_mean(&self, x: &Points, t: &[f64]) -> Result<Points> {
            let rows: Vec<Vec<f64>> = x.rows().zip(t).map(|(r, &tm)| (self.0)(r, tm)).collect();
            Points::from_rows(&rows)
        }
    }

    fn p(rows: &[&[f64]]) -> Points {
        Points::from_rows(rows).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let x = p(&[&[1.0, -2.0]]);
        let ident = Mean(|r: &[f64], _| r.to_vec());
        assert_eq!(velocity(&x, 0.3, &ident).unwrap().as_slice(), &[0.0, 0.0]);
        let zero = Mean(|r: &[f64], _| vec![0.0; r.len()]);
        assert_eq!(velocity(&x, 1.0, &zero).unwrap(), x);
        assert!(velocity(&x, 0.0, &zero).is_err());
        // N(0,1) -> N(0,1), t = 0.5: E[x0|x] = (1-t)/((1-t)² + t²) x = x.
        let gauss = Mean(|r: &[f64], t| {
            r.iter()
                .map(|v| (1.0 - t) / ((1.0 - t).powi(2) + t * t) * v)
                .collect()
        });
        let v = velocity(&p(&[&[1.0]]), 0.5, &gauss).unwrap();
        assert!(v[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn big_g_examples() {
        let x = p(&[&[2.0]]);
        let g = p(&[&[0.0]]);
        assert_eq!(big_g(&x, 1.0, 0.25, &g).unwrap()[(0, 0)], 0.5);
        assert_eq!(big_g(&x, 0.7, 0.7, &g).unwrap(), x);
        assert_eq!(big_g(&x, 0.7, 0.0, &g).unwrap(), g);
        assert_eq!(big_g(&x, 0.0, 0.0, &g).unwrap(), x);
        assert!(big_g(&x, 0.0, 0.5, &g).is_err());
        assert!(big_g(&x, 0.5, 0.7, &g).is_err());
    }

    #[test]
    fn euler_step_arithmetic() {
        let zero = Mean(|r: &[f64], _| vec![0.0; r.len()]);
        let x = p(&[&[1.0]]);
        let h = 0.1;
        let y = step(&x, 1.0, 1.0 - h, Solver::Euler, &zero).unwrap();
        assert!((y[(0, 0)] - (1.0 - h)).abs() < 1e-15);
    }

    #[test]
    fn traversal_rules() {
        let grid = TimeGrid::uniform(8).unwrap();
        let zero = Mean(|r: &[f64], _| vec![0.0; r.len()]);
        let x = p(&[&[1.5, 2.0]]);
        let same = integrate(
            &TraversalRequest {
                x: &x,
                t_from: 0.5,
                t_to: 0.5,
                grid: &grid,
                solver: Solver::Heun,
            },
            &zero,
        )
        .unwrap();
        assert_eq!(same, x);
        assert!(integrate(
            &TraversalRequest {
                x: &x,
                t_from: 0.25,
                t_to: 0.75,
                grid: &grid,
                solver: Solver::Heun
            },
            &zero
        )
        .is_err());
        // Posterior mean 0 means x_t = t x_1: the flow is exactly linear.
        let y = integrate(
            &TraversalRequest {
                x: &x,
                t_from: 1.0,
                t_to: 0.25,
                grid: &grid,
                solver: Solver::Heun,
            },
            &zero,
        )
        .unwrap();
        assert!((y[(0, 0)] - 0.375).abs() < 1e-14);
    }

    #[test]
    fn semigroup_along_grid() {
        let grid = TimeGrid::uniform(16).unwrap();
        let f = Mean(|r: &[f64], t| r.iter().map(|v| 0.3 + (1.0 - t) * v).collect());
        let x = p(&[&[0.7, -1.2]]);
        let direct = integrate(
            &TraversalRequest {
                x: &x,
                t_from: 1.0,
                t_to: 0.25,
                grid: &grid,
                solver: Solver::Heun,
            },
            &f,
        )
        .unwrap();
        let mid = integrate(
            &TraversalRequest {
                x: &x,
                t_from: 1.0,
                t_to: 0.5,
                grid: &grid,
                solver: Solver::Heun,
            },
            &f,
        )
        .unwrap();
        let two = integrate(
            &TraversalRequest {
                x: &mid,
                t_from: 0.5,
                t_to: 0.25,
                grid: &grid,
                solver: Solver::Heun,
            },
            &f,
        )
        .unwrap();
        assert!(direct.max_distance(&two).unwrap() < 1e-12);
    }

    #[test]
    fn endpoint_hook_used_for_final_hop() {
        struct WithEnd;
        impl VelocityField for WithEnd {
            fn posterior_mean(&self, x: &Points, _t: &[f64]) -> Result<Points> {
                Ok(x.clone())
            }
            fn endpoint(&self, x: &Points, _t: &[f64]) -> Option<Result<Points>> {
                Some(Ok(Points::zeros(x.len(), x.dim())))
            }
        }
        let x = p(&[&[3.0]]);
        let y = step(&x, 0.1, 0.0, Solver::Heun, &WithEnd).unwrap();
        assert_eq!(y[(0, 0)], 0.0);
    }

    #[test]
    fn change_of_variables() {
        let x = p(&[&[2.0, -4.0]]);
        let (xb, tp) = ctm_to_gctm(&x, 1.0).unwrap();
        assert_eq!(tp, 0.5);
        assert_eq!(xb.as_slice(), &[1.0, -2.0]);
        let (_, t80) = ctm_to_gctm(&x, 80.0).unwrap();
        assert_eq!(t80, 80.0 / 81.0);
        assert!(ctm_to_gctm(&x, 0.0).is_err());
        assert!(gctm_to_ctm(&x, 1.0).is_err());
        for &t in &[1e-3, 0.37, 1.0, 12.5, 80.0] {
            let (xb, tp) = ctm_to_gctm(&x, t).unwrap();
            let (xr, tr) = gctm_to_ctm(&xb, tp).unwrap();
            assert!((tr - t).abs() <= 4.0 * f64::EPSILON * t.max(1.0) * (1.0 + t));
            assert!(xr.max_distance(&x).unwrap() < 1e-12 * (1.0 + t));
        }
    }

    #[test]
    fn pfode_gaussian_example() {
        // Data N(0,1), kernel N(x0, t²): E[x0|x_t] = x / (1 + t²).
        let f = Mean(|r: &[f64], t| r.iter().map(|v| v / (1.0 + t * t)).collect());
        let x = p(&[&[3.0]]);
        let v = pfode_velocity(&x, 1.0, &f).unwrap();
        assert!((v[(0, 0)] - 1.5).abs() < 1e-15);
    }
}
