//! Period-anchored deformable convolution for time series.
//!
//! The crate extracts dominant periods from a batch with a real FFT, uses them
//! as dilation anchors for a 1D deformable convolution whose taps are sampled
//! with either bilinear or Gaussian radial-basis interpolation, and cascades
//! those operators over orthogonal channel partitions. Every layer carries a
//! hand-written backward pass that is checked against central finite
//! differences.
//!
//! Module map:
//!
//! * [`numerics`] dense containers, seeded RNG, real FFT, finite differences
//! * [`spectral`] spectral energy and top-K period extraction
//! * [`interp`] bilinear and Gaussian RBF sub-pixel sampling with gradients
//! * [`deform`] the deformable operator (forward and backward)
//! * [`fgdm`] channel partitioning, routing, the cascaded block and its cost model
//! * [`backbone`] stem, stacked blocks, downsampling and task heads
//! * [`training`] losses, metrics, optimizers, the training loop, gradcheck
//! * [`synth`] synthetic signals and CSV ingestion
//! * [`experiments`] end-to-end experiment drivers used by the CLI

pub mod backbone;
pub mod deform;
pub mod error;
pub mod experiments;
pub mod fgdm;
pub mod interp;
pub mod nn;
pub mod numerics;
pub mod spectral;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Features, SeededRng, SeriesBatch};
