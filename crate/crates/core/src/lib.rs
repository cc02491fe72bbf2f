//! Software design toolkit for tiled deconvolution accelerators.
//!
//! The crate covers the full pre-silicon design flow in plain software:
//!
//! - [`model`] — layer/tile configuration and shape arithmetic;
//! - [`deconv`] — a scatter-style reference deconvolution and the
//!   gather-style tiled execution with stride hole skipping, equivalent by
//!   construction and checked against each other;
//! - [`network`] — a small generative network (fully-connected stem plus
//!   deconvolution layers) and seeded sampling;
//! - [`quant`] — fixed-point formats and quantized inference;
//! - [`stats`] — kernel two-sample tests scoring quantized against
//!   full-precision output distributions, and the bitwidth sweep;
//! - [`roofline`] — analytic design-space exploration over tilings;
//! - [`tracesim`] — a loop-level simulator that independently validates
//!   the analytic model.
//!
//! Everything is deterministic given explicit seeds, and every type is an
//! immutable value after construction.

pub mod deconv;
pub mod error;
pub mod model;
pub mod network;
pub mod quant;
pub mod roofline;
pub mod stats;
pub mod tracesim;

pub use error::{Error, Result};
pub use model::{LayerConfig, Tensor, TileConfig};
pub use network::{LatentSampler, NetworkSpec, WeightStore};
pub use quant::FixedPointFormat;
pub use stats::SampleSet;
