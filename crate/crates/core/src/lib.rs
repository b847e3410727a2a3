//! Generalized consistency trajectory models (GCTMs) at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: the two-time-conditioned MLP regressor `g(x, t, s)`, its exact
//!   reverse-mode gradient, Adam, EMA tracking and the pseudo-huber distance.
//! - [`couplings`]: independent, entropic-OT and supervised pair sampling.
//! - [`schedule`]: EDM sigma schedule, its flow-matching time grid, and the
//!   training-time distributions.
//! - [`flow`]: the flow-matching ODE, the `G`-from-`g` parametrization, Euler
//!   and Heun integration and the diffusion/flow-matching change of variables.
//! - [`oracle`]: closed-form Gaussian posterior means and reference trajectories.
//! - [`trainer`]: teacher-free training with EMA bootstrapping.
//! - [`inference`]: one-step / multi-step sampling, guided restoration, editing.
//! - [`harness`]: datasets, metrics, plots, config, checkpoints, verification.
//!
//! Batch-level work fans out over fixed-size shards (see [`par`]); partial
//! results are always reduced in shard order so outputs are bit-identical with
//! or without the `parallel` feature.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod couplings;
pub mod error;
pub mod flow;
pub mod harness;
pub mod inference;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod points;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{GctmError, Result};
pub use points::Points;
