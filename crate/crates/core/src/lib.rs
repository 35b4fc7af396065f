//! Surface anomaly detection by image completion.
//!
//! A dilated convolutional network learns to fill a square hole cut into
//! defect-free texture patches. At test time each window is inpainted and the
//! absolute difference between prediction and observation inside the hole is
//! the anomaly score.

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod net;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scoring;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
