pub mod cli;
pub mod contrast;
pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
