//! Minimal differentiable compute engine for the footprint-guided regressor.
//!
//! A fixed layer vocabulary — conv2d, relu, 2x2 max pool, global average
//! pool, fully connected, channel concat, RoI-align — with hand-written
//! reverse-mode gradients, SGD with momentum and weight decay, a
//! reduce-on-plateau schedule, and a central-difference gradient checker.
//! Everything runs in f64 so the gradcheck paths are native double precision.
//!
//! All operations are pure functions of their inputs (plus explicit
//! parameter slices), so they are safe to call concurrently; gradient
//! accumulation across a batch must sum per-sample gradients in a fixed
//! order to stay bit-reproducible.

mod gradcheck;
mod layers;
mod optim;
mod roi;
mod tensor;

pub use gradcheck::gradcheck;
pub use layers::{
    channel_concat, channel_concat_backward, conv2d_backward, conv2d_forward, conv_output_len,
    fc_backward, fc_forward, global_average_pool, global_average_pool_backward,
    max_pool2d_backward, max_pool2d_forward, relu, relu_backward, ConvGrads,
};
pub use optim::{sgd_step, PlateauSchedule, SgdState};
pub use roi::{roi_align_backward, roi_align_forward, RoiAlignCfg};
pub use tensor::Tensor3;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("region of interest lies outside the feature extent")]
    RoiOutside,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid optimizer setting: {0}")]
    InvalidOptimizer(String),
    #[error("invalid schedule setting: {0}")]
    InvalidSchedule(String),
}
