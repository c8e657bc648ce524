//! Multi-scale masked frequency forecaster for long-term time series.
//!
//! A look-back window is centred per channel, cut into segments at several
//! lengths, and each segment is moved to the frequency domain with an
//! orthonormal DCT. A learnable mask filters every (segment, frequency)
//! cell, a per-scale linear head maps the filtered spectrum to `H`
//! frequency coefficients, and the scales are summed and brought back to
//! the time domain with the inverse DCT.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod ladder;
pub mod model;
pub mod rin;
pub mod rng;
pub mod selftest;
pub mod series;
pub mod train;
pub mod transform;

pub use error::{ErrorClass, MmfError, Result};
pub use ladder::{validate_ladder, ScaleLadder, ValidatedLadder};
pub use model::{param_count, InitScheme, Model, ModelConfig, ModelParams};
pub use rin::{RinMode, RinState};
pub use rng::Rng;
pub use series::{make_windows, FrameWindows, TimeSeriesFrame, Window, WindowSource};
pub use train::{evaluate, fit, mse_loss, FitOutcome, History, Metrics, OptimizerKind, TrainConfig};
