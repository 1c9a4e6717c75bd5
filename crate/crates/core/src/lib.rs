//! Omni-dimensional dynamic convolution (ODConv) in double precision.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense row-major tensors and elementwise / linear-algebra primitives
//! - [`autodiff`]: a tape-based reverse-mode engine and a central-difference checker
//! - [`nn`]: convolution (im2col and a direct reference), dense layers, pooling, softmax
//! - [`odconv`]: the attention module and the dynamic convolution layer
//! - [`complexity`]: static parameter / multiply-add accounting for whole networks
//! - [`training`]: SGD, a synthetic texture dataset and a small training loop
//! - [`persistence`]: versioned binary checkpoints
//! - [`oracle`] and [`verify`]: independent reference implementations and the property suite
//! - [`cli`]: the `odconv` command-line front end

pub mod autodiff;
pub mod cli;
pub mod complexity;
pub mod error;
pub mod nn;
pub mod odconv;
pub mod oracle;
pub mod persistence;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
