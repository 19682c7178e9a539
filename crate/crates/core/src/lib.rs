//! Wavelet-Mamba encoder-decoder segmentation on a small, deterministic
//! reverse-mode autodiff engine.
//!
//! Layers, from the bottom up:
//! - [`tensor`]: dense tensors, a closed operator set, the tape, gradient checks
//! - [`wavelet`]: single-level orthonormal Haar transform
//! - [`scan`]: raster and serpentine scan orders and the selective scan
//! - [`blocks`]: attention, VSS/SnakeVSS, SCVSS, wavelet Mamba, patch layers
//! - [`network`]: the encoder-decoder with deep supervision, checkpoints
//! - [`eval`]: Dice + cross-entropy loss, Dice/IoU/HD95 metrics
//! - [`pipeline`]: phantoms, preprocessing, AdamW, cosine schedule, drivers
//! - [`diagnostics`]: gradient checks of every block and a tiny full model

pub mod blocks;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod network;
pub mod params;
pub mod pipeline;
pub mod scan;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
