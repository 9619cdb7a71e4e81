//! Multi-condition flow singing voice conversion.

pub mod dsp;
pub mod features;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod eval;
pub mod error;

pub use error::{Error, Result};
