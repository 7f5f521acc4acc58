pub mod analysis;
pub mod codec;
pub mod curves;
pub mod dataio;
pub mod diffnum;
pub mod error;
pub mod klcheck;
pub mod metrics;
pub mod trainer;

pub use error::{Error, Result};
