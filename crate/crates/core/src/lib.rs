//! Softmax-family recommendation losses, KL-ball DRO diagnostics and a
//! matrix-factorization training and evaluation harness.

pub mod cli;
pub mod config;
pub mod data;
pub mod dro;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod sampling;
pub mod synthetic;

pub use error::{Error, Result};
