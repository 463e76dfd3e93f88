pub mod adapters;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numcore;
pub mod qa;

pub use error::{Error, Result};
