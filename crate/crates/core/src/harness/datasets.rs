//! Standard 2D toy distributions plus diagonal Gaussians and point files.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::couplings::Sampler;
use crate::error::{GctmError, Result};
use crate::points::Points;
use crate::rng::Rng;

pub const EIGHT_GAUSSIANS_RADIUS: f64 = 2.0;
pub const EIGHT_GAUSSIANS_STD: f64 = 0.1;
pub const TWO_MOONS_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Eight isotropic modes evenly spaced on a circle of radius 2.
    EightGaussians,
    /// Two interleaved half circles, centred at the origin.
    TwoMoons,
    /// Alternating unit squares of a 4x4 board on `[-2, 2]^2`.
    Checkerboard,
    /// Independent coordinates `N(mean_k, var_k)`.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    /// Uniform resampling of a fixed point cloud.
    Points(Points),
}

impl Dataset {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != var.len() {
            return Err(GctmError::shape(
                "gaussian mean and variance lengths differ",
            ));
        }
        if var.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || mean.iter().any(|m| !m.is_finite())
        {
            return Err(GctmError::invalid(
                "gaussian parameters must be finite, variances >= 0",
            ));
        }
        Ok(Dataset::Gaussian { mean, var })
    }

    /// Reads whitespace- or comma-separated rows; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let points = parse_points(&text)?;
        if points.is_empty() {
            return Err(GctmError::invalid(format!(
                "{} holds no points",
                path.display()
            )));
        }
        Ok(Dataset::Points(points))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dataset::EightGaussians => "eight_gaussians",
            Dataset::TwoMoons => "two_moons",
            Dataset::Checkerboard => "checkerboard",
            Dataset::Gaussian { .. } => "gaussian",
            Dataset::Points(_) => "file",
        }
    }
}

pub fn parse_points(text: &str) -> Result<Points> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| GctmError::Parse(format!("line {}: '{f}': {e}", no + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(Points::zeros(0, 1));
    }
    Points::from_rows(&rows)
}

impl Sampler for Dataset {
    fn dim(&self) -> usize {
        match self {
            Dataset::Gaussian { mean, .. } => mean.len(),
            Dataset::Points(p) => p.dim(),
            _ => 2,
        }
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Points {
        let d = self.dim();
        let mut out = Points::zeros(n, d);
        for row in out.rows_mut() {
            match self {
                Dataset::EightGaussians => {
                    let k = rng.random_range(0..8) as f64;
                    let angle = k * std::f64::consts::FRAC_PI_4;
                    for (c, v) in [angle.cos(), angle.sin()].into_iter().zip(row.iter_mut()) {
                        let e: f64 = StandardNormal.sample(rng);
                        *v = EIGHT_GAUSSIANS_RADIUS * c + EIGHT_GAUSSIANS_STD * e;
                    }
                }
                Dataset::TwoMoons => {
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    let (x, y) = if rng.random_bool(0.5) {
                        (theta.cos(), theta.sin())
                    } else {
                        (1.0 - theta.cos(), 0.5 - theta.sin())
                    };
                    let (ex, ey): (f64, f64) =
                        (StandardNormal.sample(rng), StandardNormal.sample(rng));
                    row[0] = x - 0.5 + TWO_MOONS_NOISE * ex;
                    row[1] = y - 0.25 + TWO_MOONS_NOISE * ey;
                }
                Dataset::Checkerboard => {
                    let x = rng.random_range(-2.0..2.0f64);
                    let band = rng.random_range(0..2) as f64;
                    let y = rng.random_range(0.0..1.0) - 2.0 * band + (x.floor().rem_euclid(2.0));
                    row[0] = x;
                    row[1] = y;
                }
                Dataset::Gaussian { mean, var } => {
                    for ((v, m), s2) in row.iter_mut().zip(mean).zip(var) {
                        let e: f64 = StandardNormal.sample(rng);
                        *v = m + s2.sqrt() * e;
                    }
                }
                Dataset::Points(p) => {
                    let i = rng.random_range(0..p.len());
                    row.copy_from_slice(p.row(i));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn same_seed_same_draws() {
        for ds in [
            Dataset::EightGaussians,
            Dataset::TwoMoons,
            Dataset::Checkerboard,
        ] {
            let a = ds.sample(50, &mut rng::seeded(3));
            let b = ds.sample(50, &mut rng::seeded(3));
            assert_eq!(a, b);
            assert_eq!(a.dim(), 2);
        }
    }

    #[test]
    fn eight_gaussians_sit_on_the_circle() {
        let p = Dataset::EightGaussians.sample(2000, &mut rng::seeded(1));
        for r in p.rows() {
            let radius = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((radius - 2.0).abs() < 0.6);
        }
    }

    #[test]
    fn checkerboard_occupies_alternate_cells() {
        let p = Dataset::Checkerboard.sample(2000, &mut rng::seeded(2));
        for r in p.rows() {
            assert!(r[0] >= -2.0 && r[0] < 2.0 && r[1] >= -2.0 && r[1] < 2.0);
            let parity = (r[0].floor() + r[1].floor()).rem_euclid(2.0);
            assert_eq!(parity, 0.0, "{r:?}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let ds = Dataset::gaussian(vec![1.0, -2.0], vec![0.25, 4.0]).unwrap();
        let p = ds.sample(20000, &mut rng::seeded(4));
        for k in 0..2 {
            let col = p.column(k);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((m - [1.0, -2.0][k]).abs() < 0.05);
            assert!((v / [0.25, 4.0][k] - 1.0).abs() < 0.05);
        }
        assert!(Dataset::gaussian(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn point_files() {
        let p = parse_points("# header\n1 2\n3,4\n\n5 6 # trailing\n").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.row(2), &[5.0, 6.0]);
        assert!(parse_points("1 2\n3\n").is_err());
        assert!(parse_points("1 x\n").is_err());
    }
}
