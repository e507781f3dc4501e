pub mod codec;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod net;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
