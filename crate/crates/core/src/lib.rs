//! Reservoir classifiers whose recurrent matrix carries a small set of
//! trainable ("plastic") weights, tuned online by a continuous-time
//! actor-critic that approximately solves the Hamilton-Jacobi-Bellman
//! equation of the output-tracking error.
//!
//! Pipeline:
//! 1. [`reservoir`]: Euler-integrated leaky rate network with a ridge-trained readout.
//! 2. [`tracking`]: lifts the decoded output error into a control-affine
//!    system `de/dt = f + g u` whose control `u` is the plastic weights.
//! 3. [`hjb`], [`critic`], [`actor`]: running cost, value-gradient critic and
//!    stationary-control actor whose output is written back into `W_r`.
//! 4. [`trainer`]: hyper-parameter gate, training loop, diagnostics,
//!    feedforward evaluation and a scalar LQR self-test of the update laws.
//!
//! See `examples/` for runnable entry points.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor;
pub mod cli;
pub mod config;
pub mod critic;
pub mod data;
pub mod error;
pub mod features;
pub mod hjb;
pub mod reservoir;
pub mod tracking;
pub mod trainer;

pub use data::{load_ucr_tsv, parse_ucr_tsv, synth_two_tone, LabeledSeries, LabeledSeriesDataset};
pub use error::{DataError, Error, Result};
pub use reservoir::{ReservoirModel, ReservoirSpec};
pub use trainer::{evaluate, fit, lqr_selftest, LqrConfig, TrainConfig};
