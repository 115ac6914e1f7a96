pub mod data;
pub mod error;
pub mod experiment;
pub mod field;
pub mod metrics;
pub mod render;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
