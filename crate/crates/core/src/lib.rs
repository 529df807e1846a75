//! Signal and gradient variance propagation in simplified residual networks.
//!
//! The crate is `no_std` (it needs `alloc`) and carries only the algorithmic
//! pieces: network model types, deterministic sampling, exact forward and
//! backward propagation for plain and batch-normalized residual blocks,
//! closed-form variance predictors, mergeable Monte-Carlo statistics and a
//! small gradient-descent probe. File formats, threading and the command line
//! live in the `resprop` companion crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod analytic;
pub mod error;
pub mod matrix;
pub mod model;
pub mod montecarlo;
pub mod propagation;
pub mod sampling;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{
    variance_of, Activation, BlockKind, Distribution, FloatFormat, InitKind, InitScheme,
    NetworkConfig,
};
