//! Forward and backward kernels. Each is a pure function of its arguments;
//! [`Tape`](super::Tape) sequences them.

pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_backward, conv_output_size, ConvGeometry};
pub use dense::{linear, relu, soft_cross_entropy, softmax_cross_entropy, softmax_rows};
pub use norm::{batch_norm2d_eval, batch_norm2d_train};
pub use pool::adaptive_avg_pool2d;
