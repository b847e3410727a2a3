//! Two-sample metrics standing in for FID-style scores at toy scale.
//!
//! `energy_distance` plays the role of FID, `mse_to_pairs` that of a
//! faithfulness score, and `measurement_residual` that of PSNR.

use rand_distr::{Distribution, StandardNormal};

use crate::couplings::CorruptionOperator;
use crate::error::{GctmError, Result};
use crate::par::{self, SHARD_ROWS};
use crate::points::{squared_distance, squared_norm, Points};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: &'static str,
    pub value: f64,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

fn mean_pairwise(a: &Points, b: &Points) -> f64 {
    let total = par::sum_indices(a.len(), SHARD_ROWS, |i| {
        let ai = a.row(i);
        b.rows().map(|bj| squared_distance(ai, bj).sqrt()).sum()
    });
    total / (a.len() as f64 * b.len() as f64)
}

/// `2 E|a - b| - E|a - a'| - E|b - b'|` with every expectation averaged over
/// all ordered pairs, diagonal included. This form is non-negative and
/// exactly zero for identical multisets.
pub fn energy_distance(a: &Points, b: &Points) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GctmError::invalid(
            "energy distance needs at least two points per set",
        ));
    }
    if a.dim() != b.dim() {
        return Err(GctmError::shape("sample sets differ in dimension"));
    }
    // Both cross orders and a commutative within-set sum make the result
    // bit-for-bit symmetric; clamp rounding below zero.
    let cross = mean_pairwise(a, b) + mean_pairwise(b, a);
    let within = mean_pairwise(a, a) + mean_pairwise(b, b);
    Ok((cross - within).max(0.0))
}

/// Squared 1D Wasserstein-2 between empirical measures, by integrating the
/// difference of the two quantile functions.
pub fn wasserstein2_sq_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut q = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next = ((i + 1) as f64 / na).min((j + 1) as f64 / nb);
        let diff = a[i] - b[j];
        acc += (next - q) * diff * diff;
        q = next;
        if (i + 1) as f64 / na <= q {
            i += 1;
        }
        if (j + 1) as f64 / nb <= q {
            j += 1;
        }
    }
    acc
}

/// Mean over `n_projections` random unit directions of the 1D W2 distance
/// between the projected sets. Directions come from `seed`.
pub fn sliced_wasserstein(a: &Points, b: &Points, n_projections: usize, seed: u64) -> Result<f64> {
    if n_projections == 0 {
        return Err(GctmError::invalid("n_projections must be >= 1"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(GctmError::invalid(
            "sliced Wasserstein needs non-empty sets",
        ));
    }
    if a.dim() != b.dim() {
        return Err(GctmError::shape("sample sets differ in dimension"));
    }
    let d = a.dim();
    let mut r = rng::seeded(seed);
    let dirs: Vec<Vec<f64>> = (0..n_projections)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let n = squared_norm(&v).sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect();
    let project = |p: &Points, u: &[f64]| -> Vec<f64> {
        p.rows()
            .map(|x| x.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    };
    let per_dir = par::map_indices(n_projections, |k| {
        let u = &dirs[k];
        wasserstein2_sq_1d(&mut project(a, u), &mut project(b, u)).sqrt()
    });
    Ok(per_dir.iter().sum::<f64>() / n_projections as f64)
}

/// Mean squared distance between aligned rows.
pub fn mse_to_pairs(out: &Points, targets: &Points) -> Result<f64> {
    out.same_shape(targets)?;
    if out.is_empty() {
        return Err(GctmError::invalid("empty sample set"));
    }
    Ok(out
        .rows()
        .zip(targets.rows())
        .map(|(a, b)| squared_distance(a, b))
        .sum::<f64>()
        / out.len() as f64)
}

/// Root-mean-square of `|x_1 - H x|` over rows.
pub fn measurement_residual(
    x: &Points,
    measurement: &Points,
    op: &CorruptionOperator,
) -> Result<f64> {
    x.same_shape(measurement)?;
    op.validate(x.dim())?;
    if x.is_empty() {
        return Err(GctmError::invalid("empty sample set"));
    }
    let hx = op.apply_points(x);
    let total: f64 = hx
        .rows()
        .zip(measurement.rows())
        .map(|(h, m)| squared_distance(h, m))
        .sum();
    Ok((total / x.len() as f64).sqrt())
}
