//! Layer primitives with hand-written backward passes, plus Adam.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod init;
pub mod linear;
pub mod loss;
pub mod pool;

pub use activation::{relu, relu_backward};
pub use adam::{adam_step, Adam, AdamState};
pub use batchnorm::BatchNorm;
pub use conv::{conv2d_backward, conv2d_forward, ConvCache};
pub use linear::Linear;
pub use loss::softmax_cross_entropy;
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool2x2_backward, maxpool2x2_forward};
