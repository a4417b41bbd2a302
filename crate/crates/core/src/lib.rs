//! Multi-concept video self-attention for keyshot video summarization.

pub mod attention;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod recurrent;
pub mod summarize;

pub use error::{Error, Result};
