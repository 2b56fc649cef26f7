pub mod cli;
pub mod config;
pub mod cvae;
pub mod datacube;
pub mod detect;
mod error;
pub mod latentdiag;
pub mod pca;
pub mod pipeline;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
