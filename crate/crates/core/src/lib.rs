pub mod ablation;
pub mod cli;
pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod hmfa;
pub mod hmpf;
pub mod io;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
