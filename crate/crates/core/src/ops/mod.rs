//! Forward operations with recorded gradients.
//!
//! All ops are pure with respect to their inputs (batchnorm's running-stat
//! buffers are the one piece of explicit layer state, mutated only in train
//! mode). Reductions run in a fixed order independent of thread count.

pub mod conv;
pub mod dense;
pub mod gemm;
pub mod norm;
pub mod pointwise;
pub mod pool;
pub mod reduce;

pub use conv::{conv3d, conv3d_direct, transposed_conv3d, Padding};
pub use dense::dense;
pub use norm::{batchnorm3d, BatchNormState, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use pointwise::{add, affine, concat_channels, mul, mul_channelwise, relu, sigmoid};
pub use pool::{global_avg_pool, maxpool3d, upsample_nearest, MaxPoolOut};
pub use reduce::{
    div, log_softmax_channels, mean_all, narrow1d, softmax_channels, sum_all, sum_per_channel,
};

/// Forward mode: train updates batchnorm running statistics, eval reads
/// them and is side-effect free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
