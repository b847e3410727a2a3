//! Closed-form posterior means for diagonal-Gaussian endpoints under the
//! independent coupling, and fine-step reference trajectories built on them.
//!
//! With `x_0 ~ N(mu0, var0)` and `x_1 ~ N(mu1, var1)` independent, the
//! interpolant `x_t = (1-t) x_0 + t x_1` is Gaussian per coordinate with mean
//! `m_t = (1-t) mu0 + t mu1` and variance `v_t = (1-t)² var0 + t² var1`, so
//! every conditional expectation below is a one-line Gaussian conditioning.

use crate::error::{GctmError, Result};
use crate::flow::{self, GFunction, Solver, VelocityField};
use crate::par;
use crate::points::Points;

/// Diagonal-Gaussian endpoints, coupled independently.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub var0: Vec<f64>,
    pub var1: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(mu0: Vec<f64>, var0: Vec<f64>, mu1: Vec<f64>, var1: Vec<f64>) -> Result<Self> {
        let d = mu0.len();
        if d == 0 || var0.len() != d || mu1.len() != d || var1.len() != d {
            return Err(GctmError::shape(
                "GaussianSpec vectors must share a positive length",
            ));
        }
        if var0
            .iter()
            .chain(&var1)
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(GctmError::invalid("variances must be strictly positive"));
        }
        Ok(GaussianSpec {
            mu0,
            mu1,
            var0,
            var1,
        })
    }

    /// `N(mu0, var0)` data against standard-normal noise.
    pub fn data_vs_noise(mu0: Vec<f64>, var0: Vec<f64>) -> Result<Self> {
        let d = mu0.len();
        Self::new(mu0, var0, vec![0.0; d], vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// The same spec with `x_1` variance inflated by `scale²`, i.e. the law of
    /// `x_1 + scale * eps`.
    pub fn with_perturbation(&self, scale: f64) -> Self {
        let mut s = self.clone();
        s.var1.iter_mut().for_each(|v| *v += scale * scale);
        s
    }

    fn check(&self, x: &Points) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(GctmError::shape(format!(
                "point dim {} != spec dim {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `E[x_0 | x_t]` per row (each row at its own `t` in `(0, 1]`).
pub fn fm_posterior_mean_rows(x: &Points, t: &[f64], spec: &GaussianSpec) -> Result<Points> {
    spec.check(x)?;
    if t.len() != x.len() {
        return Err(GctmError::shape("one time per row required"));
    }
    let mut out = x.clone();
    for (row, &tm) in out.rows_mut().zip(t) {
        if !(tm > 0.0 && tm <= 1.0) {
            return Err(GctmError::invalid(format!(
                "posterior mean needs t in (0, 1], got {tm}"
            )));
        }
        for (k, v) in row.iter_mut().enumerate() {
            let m = (1.0 - tm) * spec.mu0[k] + tm * spec.mu1[k];
            let var = (1.0 - tm).powi(2) * spec.var0[k] + tm * tm * spec.var1[k];
            *v = spec.mu0[k] + (1.0 - tm) * spec.var0[k] / var * (*v - m);
        }
    }
    Ok(out)
}

pub fn fm_posterior_mean(x: &Points, t: f64, spec: &GaussianSpec) -> Result<Points> {
    fm_posterior_mean_rows(x, &vec![t; x.len()], spec)
}

/// `E[x_1 - x_0 | x_t]` by direct conditioning of the displacement on `x_t`:
/// `Cov(x_1 - x_0, x_t) = t var1 - (1-t) var0`.
pub fn fm_displacement_mean(x: &Points, t: f64, spec: &GaussianSpec) -> Result<Points> {
    spec.check(x)?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(GctmError::invalid(format!("t must be in (0, 1], got {t}")));
    }
    let mut out = x.clone();
    for row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            let m = (1.0 - t) * spec.mu0[k] + t * spec.mu1[k];
            let var = (1.0 - t).powi(2) * spec.var0[k] + t * t * spec.var1[k];
            let cov = t * spec.var1[k] - (1.0 - t) * spec.var0[k];
            *v = spec.mu1[k] - spec.mu0[k] + cov / var * (*v - m);
        }
    }
    Ok(out)
}

/// `E_p[x_0 | x_t]` for `x_0 ~ N(mu0, var0)` and `x_t | x_0 ~ N(x_0, t² I)`.
pub fn diffusion_posterior_mean(x: &Points, t: f64, mu0: &[f64], var0: &[f64]) -> Result<Points> {
    if x.dim() != mu0.len() || var0.len() != mu0.len() {
        return Err(GctmError::shape("mu0 / var0 must match point dim"));
    }
    if !(t > 0.0) {
        return Err(GctmError::invalid(format!(
            "diffusion time must be positive, got {t}"
        )));
    }
    let mut out = x.clone();
    for row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = mu0[k] + var0[k] / (var0[k] + t * t) * (*v - mu0[k]);
        }
    }
    Ok(out)
}

/// Flow-matching velocity field of a [`GaussianSpec`].
#[derive(Debug, Clone)]
pub struct FmOracle<'a>(pub &'a GaussianSpec);

impl VelocityField for FmOracle<'_> {
    fn posterior_mean(&self, x: &Points, t: &[f64]) -> Result<Points> {
        fm_posterior_mean_rows(x, t, self.0)
    }
}

/// Probability-flow field of Gaussian data under the variance-exploding kernel.
#[derive(Debug, Clone)]
pub struct DiffusionOracle<'a> {
    pub mu0: &'a [f64],
    pub var0: &'a [f64],
}

impl VelocityField for DiffusionOracle<'_> {
    fn posterior_mean(&self, x: &Points, t: &[f64]) -> Result<Points> {
        let mut out = Points::zeros(x.len(), x.dim());
        for (i, &tm) in t.iter().enumerate() {
            let row = diffusion_posterior_mean(&x.slice_rows(i, i + 1), tm, self.mu0, self.var0)?;
            out.row_mut(i).copy_from_slice(row.row(0));
        }
        Ok(out)
    }
}

/// States of a reference integration from `t = 1` to `t = 0`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `1 = times[0] > ... > times[steps] = 0`.
    pub times: Vec<f64>,
    pub states: Vec<Points>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &Points {
        self.states.last().expect("at least one state")
    }
}

pub const REFERENCE_STEPS: usize = 4096;

fn uniform_descending(steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| 1.0 - k as f64 / steps as f64)
        .map(|v| v.max(0.0))
        .collect()
}

/// Heun at `steps` uniform steps from `t = 1`, the last hop into 0 landing on
/// the exact posterior mean at the smallest positive time.
pub fn reference_trajectory(x1: &Points, spec: &GaussianSpec, steps: usize) -> Result<Trajectory> {
    if steps < 64 {
        return Err(GctmError::invalid(
            "reference integration needs at least 64 steps",
        ));
    }
    spec.check(x1)?;
    let times = uniform_descending(steps);
    let field = FmOracle(spec);
    let mut states = Vec::with_capacity(times.len());
    states.push(x1.clone());
    for w in times.windows(2) {
        let next = flow::step(
            states.last().expect("non-empty"),
            w[0],
            w[1],
            Solver::Heun,
            &field,
        )?;
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

/// Endpoint of [`reference_trajectory`] without keeping the path; rows are
/// integrated in parallel shards.
pub fn reference_endpoint(x1: &Points, spec: &GaussianSpec, steps: usize) -> Result<Points> {
    if steps < 64 {
        return Err(GctmError::invalid(
            "reference integration needs at least 64 steps",
        ));
    }
    spec.check(x1)?;
    let times = uniform_descending(steps);
    let field = FmOracle(spec);
    let shards = par::map_shards(x1.len(), 256, |r| {
        flow::integrate_times(&x1.slice_rows(r.start, r.end), &times, Solver::Heun, &field)
    });
    let mut data = Vec::with_capacity(x1.as_slice().len());
    for s in shards {
        data.extend(s?.into_vec());
    }
    Points::from_vec(data, x1.dim())
}

/// The oracle solution map expressed as a regressor `g(x, t, s)`: `G` comes
/// from fine uniform Heun integration of the oracle field, then
/// `g = (G - (s/t) x) / (1 - s/t)`; at `s = t`, `g` is the posterior mean.
#[derive(Debug, Clone)]
pub struct OracleG {
    pub spec: GaussianSpec,
    /// Heun steps per unit of time.
    pub steps_per_unit: usize,
}

impl OracleG {
    pub fn new(spec: GaussianSpec) -> Self {
        OracleG {
            spec,
            steps_per_unit: REFERENCE_STEPS,
        }
    }

    fn solve_row(&self, x: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
        let p = Points::from_vec(x.to_vec(), x.len())?;
        let steps = (((t - s) * self.steps_per_unit as f64).ceil() as usize).max(1);
        let times: Vec<f64> = (0..=steps)
            .map(|k| {
                if k == steps {
                    s
                } else {
                    t - (t - s) * k as f64 / steps as f64
                }
            })
            .collect();
        Ok(flow::integrate_times(&p, &times, Solver::Heun, &FmOracle(&self.spec))?.into_vec())
    }
}

impl GFunction for OracleG {
    fn g(&self, x: &Points, t: &[f64], s: &[f64]) -> Result<Points> {
        self.spec.check(x)?;
        let rows = par::map_indices(x.len(), |i| -> Result<Vec<f64>> {
            let (ti, si) = (t[i], s[i]);
            let row = x.row(i);
            if si == ti {
                if ti == 0.0 {
                    return Ok(row.to_vec());
                }
                let m =
                    fm_posterior_mean(&Points::from_vec(row.to_vec(), row.len())?, ti, &self.spec)?;
                return Ok(m.into_vec());
            }
            let big = self.solve_row(row, ti, si)?;
            let r = si / ti;
            Ok(big
                .iter()
                .zip(row)
                .map(|(gv, xv)| (gv - r * xv) / (1.0 - r))
                .collect())
        });
        let mut data = Vec::with_capacity(x.as_slice().len());
        for r in rows {
            data.extend(r?);
        }
        Points::from_vec(data, x.dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn std_spec(d: usize) -> GaussianSpec {
        GaussianSpec::data_vs_noise(vec![0.0; d], vec![1.0; d]).unwrap()
    }

    #[test]
    fn posterior_mean_examples() {
        let s = std_spec(1);
        let x = Points::from_rows(&[[1.0]]).unwrap();
        assert!((fm_posterior_mean(&x, 0.5, &s).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(
            fm_posterior_mean(&Points::from_rows(&[[7.3]]).unwrap(), 1.0, &s).unwrap()[(0, 0)],
            0.0
        );
        assert!(fm_posterior_mean(&x, 0.0, &s).is_err());
        let tight = GaussianSpec::data_vs_noise(vec![2.5], vec![1e-12]).unwrap();
        for &v in &[-10.0, 0.0, 10.0] {
            let m = fm_posterior_mean(&Points::from_rows(&[[v]]).unwrap(), 0.4, &tight).unwrap();
            assert!((m[(0, 0)] - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn diffusion_posterior_examples() {
        let x = Points::from_rows(&[[2.0]]).unwrap();
        assert!(
            (diffusion_posterior_mean(&x, 1.0, &[0.0], &[1.0]).unwrap()[(0, 0)] - 1.0).abs()
                < 1e-15
        );
        let far = diffusion_posterior_mean(&x, 1e8, &[0.3], &[1.0]).unwrap();
        assert!((far[(0, 0)] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn score_equivalence_spot_check() {
        let mut r = rng::seeded(4);
        let spec = GaussianSpec::data_vs_noise(vec![0.7, -1.0], vec![0.3, 2.0]).unwrap();
        for _ in 0..100 {
            let t: f64 = r.random_range(0.01..50.0);
            let x = rng::standard_normal(1, 2, &mut r);
            let a = diffusion_posterior_mean(&x, t, &spec.mu0, &spec.var0).unwrap();
            let (xb, tp) = flow::ctm_to_gctm(&x, t).unwrap();
            let b = fm_posterior_mean(&xb, tp, &spec).unwrap();
            assert!(a.max_distance(&b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn equal_gaussians_keep_their_variance() {
        let spec = GaussianSpec::new(vec![0.0], vec![0.5], vec![0.0], vec![0.5]).unwrap();
        let mut r = rng::seeded(8);
        let mut x1 = rng::standard_normal(100_000, 1, &mut r);
        x1.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v *= 0.5f64.sqrt());
        let end = reference_endpoint(&x1, &spec, 256).unwrap();
        let n = end.len() as f64;
        let mean = end.as_slice().iter().sum::<f64>() / n;
        let var = end
            .as_slice()
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((var / 0.5 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn collapsed_data_collapses_endpoints() {
        let spec = GaussianSpec::data_vs_noise(vec![1.5, -0.5], vec![1e-6, 1e-6]).unwrap();
        let mut r = rng::seeded(1);
        let x1 = rng::standard_normal(200, 2, &mut r);
        let end = reference_endpoint(&x1, &spec, 1024).unwrap();
        for row in end.rows() {
            assert!((row[0] - 1.5).abs() < 1e-2 && (row[1] + 0.5).abs() < 1e-2);
        }
    }

    #[test]
    fn richardson_self_convergence() {
        let spec = GaussianSpec::data_vs_noise(vec![1.0, -2.0], vec![0.2, 3.0]).unwrap();
        let mut r = rng::seeded(2);
        let x1 = rng::standard_normal(32, 2, &mut r);
        let e64 = reference_endpoint(&x1, &spec, 64).unwrap();
        let e128 = reference_endpoint(&x1, &spec, 128).unwrap();
        let e256 = reference_endpoint(&x1, &spec, 256).unwrap();
        let d1 = e64.max_distance(&e128).unwrap();
        let d2 = e128.max_distance(&e256).unwrap();
        assert!(d1 < 4.0 * d2 * 1.5 && d1 > 2.0 * d2, "{d1} {d2}");
    }

    #[test]
    fn trajectory_matches_endpoint_only_path() {
        let spec = std_spec(2);
        let mut r = rng::seeded(3);
        let x1 = rng::standard_normal(5, 2, &mut r);
        let tr = reference_trajectory(&x1, &spec, 64).unwrap();
        assert_eq!(tr.states.len(), 65);
        assert_eq!(tr.times[64], 0.0);
        let end = reference_endpoint(&x1, &spec, 64).unwrap();
        assert_eq!(tr.endpoint(), &end);
        assert!(reference_trajectory(&x1, &spec, 32).is_err());
    }

    #[test]
    fn oracle_g_boundary_identity() {
        let g = OracleG::new(std_spec(2));
        let x = Points::from_rows(&[[0.3, -0.4]]).unwrap();
        let big = flow::apply_g(&g, &x, 0.6, 0.6).unwrap();
        assert_eq!(big, x);
    }
}
