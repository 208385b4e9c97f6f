pub mod alignment;
pub mod config;
pub mod embedding;
pub mod error;
pub mod features;
pub mod knn;
pub mod linalg;
pub mod mixed;
pub mod pipeline;
pub mod reliability;
pub mod resources;
pub mod scoring;
pub mod summary;
pub mod synth;

pub use error::{Error, Result};
