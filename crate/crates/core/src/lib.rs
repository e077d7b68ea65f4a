pub mod assignment;
pub mod error;
pub mod export;
pub mod features;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod score;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
