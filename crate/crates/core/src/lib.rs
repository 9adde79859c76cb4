//! Quadratic and low-rank quadratic neural networks with margin
//! instrumentation.

pub mod error;
pub mod linalg;
pub mod data;
pub mod margin;
pub mod model;
pub mod train;
pub mod analysis;
pub mod cli;

pub use error::{Error, Result};
