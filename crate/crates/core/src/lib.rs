pub mod cli;
pub mod error;
pub mod eval;
pub mod nncore;
pub mod dataset;
pub mod models;
pub mod signals;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
