//! Two-time-conditioned MLP regressor `g(x, t, s)`.
//!
//! The network input is `concat(x, emb(t), emb(s))` where `emb` is a
//! sinusoidal embedding; hidden layers use SiLU and the output layer is
//! linear with the same dimension as `x`. Parameters are stored as `f32`
//! (with an EMA shadow) but every evaluation runs in `f64`.
//!
//! Flat weight layout, layer by layer: the `fan_out x fan_in` row-major weight
//! matrix followed by the `fan_out` bias vector.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{GctmError, Result};
use crate::par::{self, SHARD_ROWS};
use crate::points::{squared_distance, Points};

pub const DEFAULT_EMA_DECAY: f64 = 0.999;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

/// Sinusoidal embedding of a time value: `sin(f_k t), cos(f_k t)` for
/// `f_k = scale * 2^k`, `k = 0..num_frequencies`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEmbedding {
    pub num_frequencies: usize,
    pub scale: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        TimeEmbedding {
            num_frequencies: 6,
            scale: 1.0,
        }
    }
}

impl TimeEmbedding {
    /// Width of the joint `(t, s)` embedding.
    pub fn dim(&self) -> usize {
        4 * self.num_frequencies
    }

    fn write_one(&self, t: f64, out: &mut [f64]) {
        let mut f = self.scale;
        for k in 0..self.num_frequencies {
            let (sin, cos) = (f * t).sin_cos();
            out[2 * k] = sin;
            out[2 * k + 1] = cos;
            f *= 2.0;
        }
    }

    /// Writes the embedding of `(t, s)` into `out` (length `dim()`).
    pub fn write(&self, t: f64, s: f64, out: &mut [f64]) {
        let half = 2 * self.num_frequencies;
        self.write_one(t, &mut out[..half]);
        self.write_one(s, &mut out[half..2 * half]);
    }
}

/// Number of parameters for the given layer widths.
pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Trainable parameters `θ` and their EMA shadow `θ_EMA`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    layer_dims: Vec<usize>,
    embedding: TimeEmbedding,
    pub weights: Vec<f32>,
    pub ema_weights: Vec<f32>,
    pub ema_decay: f64,
}

impl ParamStore {
    /// Fan-in-scaled Gaussian weights (`std = 1/sqrt(fan_in)`), zero biases.
    /// The EMA shadow starts equal to the weights.
    pub fn init<R: rand::Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        embedding: TimeEmbedding,
        rng: &mut R,
    ) -> Result<Self> {
        let layer_dims = Self::layout(data_dim, hidden, &embedding)?;
        let mut weights = Vec::with_capacity(param_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                weights.push((std * z) as f32);
            }
            weights.extend(std::iter::repeat_n(0.0f32, fan_out));
        }
        Ok(ParamStore {
            layer_dims,
            embedding,
            ema_weights: weights.clone(),
            weights,
            ema_decay: DEFAULT_EMA_DECAY,
        })
    }

    /// All-zero network; `g` is identically zero.
    pub fn zeros(data_dim: usize, hidden: &[usize], embedding: TimeEmbedding) -> Result<Self> {
        let layer_dims = Self::layout(data_dim, hidden, &embedding)?;
        let n = param_count(&layer_dims);
        Ok(ParamStore {
            layer_dims,
            embedding,
            weights: vec![0.0; n],
            ema_weights: vec![0.0; n],
            ema_decay: DEFAULT_EMA_DECAY,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        embedding: TimeEmbedding,
        weights: Vec<f32>,
        ema_weights: Vec<f32>,
        ema_decay: f64,
    ) -> Result<Self> {
        validate_dims(&layer_dims, &embedding)?;
        let n = param_count(&layer_dims);
        if weights.len() != n || ema_weights.len() != n {
            return Err(GctmError::shape(format!(
                "expected {n} weights, got {} / {} (ema)",
                weights.len(),
                ema_weights.len()
            )));
        }
        if !(ema_decay > 0.0 && ema_decay < 1.0) {
            return Err(GctmError::invalid("ema_decay must lie in (0, 1)"));
        }
        Ok(ParamStore {
            layer_dims,
            embedding,
            weights,
            ema_weights,
            ema_decay,
        })
    }

    fn layout(data_dim: usize, hidden: &[usize], embedding: &TimeEmbedding) -> Result<Vec<usize>> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(data_dim + embedding.dim());
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        validate_dims(&dims, embedding)?;
        Ok(dims)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn data_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    /// The live network `g_θ`.
    pub fn network(&self) -> Result<Mlp> {
        Mlp::from_f32(&self.layer_dims, self.embedding, &self.weights)
    }

    /// The EMA network `g_{θ_EMA}`.
    pub fn ema_network(&self) -> Result<Mlp> {
        Mlp::from_f32(&self.layer_dims, self.embedding, &self.ema_weights)
    }

    /// `ema <- decay * ema + (1 - decay) * weights`, elementwise.
    pub fn ema_update(&mut self) -> Result<()> {
        if self.ema_weights.len() != self.weights.len() {
            return Err(GctmError::shape("ema and weights lengths differ"));
        }
        let d = self.ema_decay;
        for (e, &w) in self.ema_weights.iter_mut().zip(&self.weights) {
            *e = (d * *e as f64 + (1.0 - d) * w as f64) as f32;
        }
        Ok(())
    }
}

fn validate_dims(layer_dims: &[usize], embedding: &TimeEmbedding) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(GctmError::shape("need at least two positive layer widths"));
    }
    let data_dim = layer_dims[layer_dims.len() - 1];
    if layer_dims[0] != data_dim + embedding.dim() {
        return Err(GctmError::shape(format!(
            "input width {} != data dim {data_dim} + embedding {}",
            layer_dims[0],
            embedding.dim()
        )));
    }
    Ok(())
}

/// Gradients returned by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// d(loss)/d(weights), same layout as the flat weight vector.
    pub weights: Vec<f64>,
    /// d(loss)/d(x) per input row.
    pub input: Points,
}

/// An evaluable network: layer layout plus `f64` weights.
#[derive(Debug, Clone)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    embedding: TimeEmbedding,
    weights: Vec<f64>,
}

struct Tape {
    /// Input activations of every layer, `rows x fan_in`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers, `rows x fan_out`.
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// `c (m x n) = a (m x k) * b^T`, with `b` stored `n x k` row-major.
fn gemm_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides describe row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m x n) += a^T * b` with `a` stored `k x m` and `b` stored `k x n`.
fn gemm_atb_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m x n) = a (m x k) * b (k x n)`, all row-major.
fn gemm_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn from_f32(
        layer_dims: &[usize],
        embedding: TimeEmbedding,
        weights: &[f32],
    ) -> Result<Self> {
        Self::new(
            layer_dims.to_vec(),
            embedding,
            weights.iter().map(|&w| w as f64).collect(),
        )
    }

    pub fn new(
        layer_dims: Vec<usize>,
        embedding: TimeEmbedding,
        weights: Vec<f64>,
    ) -> Result<Self> {
        validate_dims(&layer_dims, &embedding)?;
        if weights.len() != param_count(&layer_dims) {
            return Err(GctmError::shape(format!(
                "expected {} weights, got {}",
                param_count(&layer_dims),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(GctmError::non_finite(format!(
                "weight {i} is {}",
                weights[i]
            )));
        }
        Ok(Mlp {
            layer_dims,
            embedding,
            weights,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn data_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    fn check_inputs(&self, x: &Points, t: &[f64], s: &[f64]) -> Result<()> {
        if x.dim() != self.data_dim() {
            return Err(GctmError::shape(format!(
                "input dim {} != network dim {}",
                x.dim(),
                self.data_dim()
            )));
        }
        if t.len() != x.len() || s.len() != x.len() {
            return Err(GctmError::shape(format!(
                "{} rows but {} t / {} s values",
                x.len(),
                t.len(),
                s.len()
            )));
        }
        for &v in t.iter().chain(s) {
            if !(0.0..=1.0).contains(&v) {
                return Err(GctmError::invalid(format!("time {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn run_shard(&self, x: &Points, t: &[f64], s: &[f64], rows: std::ops::Range<usize>) -> Tape {
        let n = rows.len();
        let d = self.data_dim();
        let in_dim = self.layer_dims[0];
        let mut a0 = vec![0.0; n * in_dim];
        for (r, i) in rows.enumerate() {
            let dst = &mut a0[r * in_dim..(r + 1) * in_dim];
            dst[..d].copy_from_slice(x.row(i));
            self.embedding.write(t[i], s[i], &mut dst[d..]);
        }
        let layers = self.layer_dims.len() - 1;
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut cur = a0;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[offset..offset + fan_in * fan_out];
            let b = &self.weights[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let mut z = vec![0.0; n * fan_out];
            gemm_abt(n, fan_in, fan_out, &cur, w, &mut z);
            for row in z.chunks_exact_mut(fan_out) {
                for (v, &bj) in row.iter_mut().zip(b) {
                    *v += bj;
                }
            }
            acts.push(cur);
            if l + 1 < layers {
                let a: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
                cur = a;
            } else {
                cur = z;
            }
        }
        Tape {
            acts,
            pre,
            out: cur,
        }
    }

    /// Reverse pass for one shard. `dout` is `rows x d`; returns the weight
    /// gradient (accumulated into `grad`) and the input-row gradient.
    fn backprop_shard(
        &self,
        tape: &Tape,
        mut delta: Vec<f64>,
        n: usize,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let layers = self.layer_dims.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += (self.layer_dims[l] + 1) * self.layer_dims[l + 1];
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let o = offsets[l];
            if l + 1 < layers {
                for (dv, &z) in delta.iter_mut().zip(&tape.pre[l]) {
                    *dv *= silu_grad(z);
                }
            }
            let (gw, gb) = grad[o..o + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            gemm_atb_acc(fan_out, n, fan_in, &delta, &tape.acts[l], gw);
            for row in delta.chunks_exact(fan_out) {
                for (g, &dv) in gb.iter_mut().zip(row) {
                    *g += dv;
                }
            }
            let w = &self.weights[o..o + fan_in * fan_out];
            let mut prev = vec![0.0; n * fan_in];
            gemm_ab(n, fan_out, fan_in, &delta, w, &mut prev);
            delta = prev;
        }
        delta
    }

    /// `g(x, t, s)` for every row.
    pub fn forward(&self, x: &Points, t: &[f64], s: &[f64]) -> Result<Points> {
        self.check_inputs(x, t, s)?;
        let d = self.data_dim();
        let shards = par::map_shards(x.len(), SHARD_ROWS, |rows| {
            self.run_shard(x, t, s, rows).out
        });
        let mut out = Vec::with_capacity(x.len() * d);
        for o in shards {
            out.extend(o);
        }
        Points::from_vec(out, d)
    }

    /// `g` at a single time pair shared by the whole batch.
    pub fn forward_at(&self, x: &Points, t: f64, s: f64) -> Result<Points> {
        let n = x.len();
        self.forward(x, &vec![t; n], &vec![s; n])
    }

    /// Exact vector-Jacobian product for a fixed output cotangent.
    pub fn backward(
        &self,
        x: &Points,
        t: &[f64],
        s: &[f64],
        cotangent: &Points,
    ) -> Result<Gradients> {
        cotangent.same_shape(x)?;
        let (_, grads, _) = self.vjp(x, t, s, |i, _out, cot| {
            cot.copy_from_slice(cotangent.row(i));
            0.0
        })?;
        Ok(grads)
    }

    /// Forward pass followed by a reverse pass whose cotangent depends on the
    /// output. `cotangent_of(row, output_row, cotangent_row)` fills the
    /// cotangent and returns that row's loss contribution; contributions are
    /// summed in row order.
    pub fn vjp<F>(
        &self,
        x: &Points,
        t: &[f64],
        s: &[f64],
        cotangent_of: F,
    ) -> Result<(Points, Gradients, f64)>
    where
        F: Fn(usize, &[f64], &mut [f64]) -> f64 + Sync + Send,
    {
        self.check_inputs(x, t, s)?;
        let d = self.data_dim();
        let in_dim = self.layer_dims[0];
        let p = self.weights.len();
        let shards = par::map_shards(x.len(), SHARD_ROWS, |rows| {
            let n = rows.len();
            let start = rows.start;
            let tape = self.run_shard(x, t, s, rows);
            let mut delta = vec![0.0; n * d];
            let mut loss = 0.0;
            for r in 0..n {
                loss += cotangent_of(
                    start + r,
                    &tape.out[r * d..(r + 1) * d],
                    &mut delta[r * d..(r + 1) * d],
                );
            }
            let mut grad = vec![0.0; p];
            let dinput = self.backprop_shard(&tape, delta, n, &mut grad);
            let mut dx = Vec::with_capacity(n * d);
            for row in dinput.chunks_exact(in_dim) {
                dx.extend_from_slice(&row[..d]);
            }
            (tape.out, grad, dx, loss)
        });
        let mut out = Vec::with_capacity(x.len() * d);
        let mut dx = Vec::with_capacity(x.len() * d);
        let mut grad = vec![0.0; p];
        let mut loss = 0.0;
        for (o, g, gx, l) in shards {
            out.extend(o);
            dx.extend(gx);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            loss += l;
        }
        Ok((
            Points::from_vec(out, d)?,
            Gradients {
                weights: grad,
                input: Points::from_vec(dx, d)?,
            },
            loss,
        ))
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// `0.0002 / (128 / batch_size)`.
pub fn default_lr(batch_size: usize) -> f64 {
    0.0002 / (128.0 / batch_size as f64)
}

impl OptimizerState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        OptimizerState {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_ADAM_EPS,
        }
    }

    pub fn for_batch_size(param_count: usize, batch_size: usize) -> Self {
        Self::new(param_count, default_lr(batch_size))
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameters and the optimizer state untouched.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut OptimizerState,
    gradient: &[f64],
) -> Result<()> {
    let n = params.weights.len();
    if gradient.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(GctmError::shape("gradient / moment length mismatch"));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(GctmError::non_finite(format!("gradient coordinate {i}")));
    }
    state.step_count += 1;
    let k = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(k);
    let c2 = 1.0 - b2.powi(k);
    for (((w, m), v), &g) in params
        .weights
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
        .zip(gradient)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let step = state.lr * (*m / c1) / ((*v / c2).sqrt() + state.eps);
        *w = (*w as f64 - step) as f32;
    }
    Ok(())
}

/// The pseudo-huber constant `c = 0.00054 * sqrt(dim)`.
pub fn pseudo_huber_c(dim: usize) -> f64 {
    0.00054 * (dim as f64).sqrt()
}

/// `sqrt(|a - b|^2 + c^2) - c` per row, `c = 0.00054 * sqrt(dim)`.
pub fn pseudo_huber(a: &Points, b: &Points, dim: usize) -> Result<Vec<f64>> {
    a.same_shape(b)?;
    if a.dim() != dim {
        return Err(GctmError::shape(format!(
            "dim {dim} != point dim {}",
            a.dim()
        )));
    }
    let c = pseudo_huber_c(dim);
    Ok(a.rows()
        .zip(b.rows())
        .map(|(x, y)| pseudo_huber_sq(squared_distance(x, y), c))
        .collect())
}

/// Pseudo-huber value from a squared distance. Written as
/// `r2 / (sqrt(r2 + c^2) + c)` to avoid cancellation for small `r2`.
#[inline]
pub fn pseudo_huber_sq(r2: f64, c: f64) -> f64 {
    r2 / ((r2 + c * c).sqrt() + c)
}
