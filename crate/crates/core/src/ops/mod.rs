//! Numeric kernels over [`Tensor`](crate::tensor::Tensor).

pub mod channels;
pub mod conv;
pub mod elementwise;
pub mod pool;
pub mod reference;
pub mod resize;

pub use channels::{channel_shuffle, channel_split, concat_channels, slice_channels};
pub use conv::{
    batch_norm, batch_norm_fold, conv2d, conv2d_bn, same_pad, BatchNormParams, ConvParams,
    DEFAULT_BN_EPSILON,
};
pub use elementwise::{argmax_channels, dropout_train, relu};
pub use pool::{global_avg_pool, maxpool};
pub use reference::naive_conv_oracle;
pub use resize::{bilinear_resize, source_coord};
