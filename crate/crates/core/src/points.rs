//! Row-major batches of points in `R^d`.

use std::ops::{Index, IndexMut};

use crate::error::{GctmError, Result};

/// A batch of `len()` points, each of dimension `dim()`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Points {
            data: vec![0.0; n * dim],
            dim,
        }
    }

    pub fn from_vec(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(GctmError::shape("point dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(GctmError::shape(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Points { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| GctmError::shape("no rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(GctmError::shape("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Points::from_vec(data, dim)
    }

    /// `n` copies of `row`.
    pub fn repeat(row: &[f64], n: usize) -> Self {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Points {
            data,
            dim: row.len(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Rows `start..end` as a new batch.
    pub fn slice_rows(&self, start: usize, end: usize) -> Points {
        Points {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points {
            data,
            dim: self.dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Points) -> Result<()> {
        if self.dim != other.dim || self.data.len() != other.data.len() {
            return Err(GctmError::shape(format!(
                "{}x{} vs {}x{}",
                self.len(),
                self.dim,
                other.len(),
                other.dim
            )));
        }
        Ok(())
    }

    /// `(1 - t_m) * self_m + t_m * other_m` row-wise.
    pub fn interpolate(&self, other: &Points, t: &[f64]) -> Result<Points> {
        self.same_shape(other)?;
        if t.len() != self.len() {
            return Err(GctmError::shape("one time per row required"));
        }
        let mut out = self.clone();
        for ((o, b), &tm) in out.rows_mut().zip(other.rows()).zip(t) {
            for (a, &bk) in o.iter_mut().zip(b) {
                *a = (1.0 - tm) * *a + tm * bk;
            }
        }
        Ok(out)
    }

    /// Root-mean-square over rows of the Euclidean row distance.
    pub fn rms_distance(&self, other: &Points) -> Result<f64> {
        self.same_shape(other)?;
        if self.is_empty() {
            return Ok(0.0);
        }
        let sq: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((sq / self.len() as f64).sqrt())
    }

    /// Largest Euclidean row distance.
    pub fn max_distance(&self, other: &Points) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .rows()
            .zip(other.rows())
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max))
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }
}

impl Index<(usize, usize)> for Points {
    type Output = f64;

    fn index(&self, (i, k): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + k]
    }
}

impl IndexMut<(usize, usize)> for Points {
    fn index_mut(&mut self, (i, k): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + k]
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn squared_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
