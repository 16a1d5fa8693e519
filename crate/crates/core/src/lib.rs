//! Volumetric segmentation at desk scale.
//!
//! Everything runs on the CPU from a single self-contained stack:
//!
//! - [`tensor`] / [`autograd`]: dense N-d tensors (N,C,D,H,W layout) with
//!   reverse-mode automatic differentiation,
//! - [`ops`]: the 3D convolution, pooling, normalization and pointwise
//!   operations the architectures are built from,
//! - [`blocks`]: the five block mechanisms (double conv, inception,
//!   squeeze-excitation, residual wrap, aggregated transform),
//! - [`models`]: nine named encoder-decoder architectures built from a
//!   shared configuration,
//! - [`data`]: phantom volume generation, a minimal NIfTI-1ated reader/writer,
//!   normalization and patching,
//! - [`train`]: losses, segmentation metrics, optimizers, and the training
//!   loop with per-epoch CSV metrics.
//!
//! Determinism: all reductions run in a fixed order regardless of thread
//! count, so seeded runs are bit-reproducible. The `VOLSEG_DETERMINISTIC=1`
//! environment variable (or the corresponding config flag) additionally
//! suppresses wall-clock noise in emitted metrics files.

pub mod autograd;
pub mod blocks;
pub mod data;
pub mod models;
pub mod ops;
pub mod tensor;
pub mod train;

pub use tensor::{Element, Tensor, TensorError};

/// True when `VOLSEG_DETERMINISTIC=1` is set in the environment.
pub fn deterministic_env() -> bool {
    std::env::var("VOLSEG_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}
