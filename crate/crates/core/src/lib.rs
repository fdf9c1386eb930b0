//! Generate, compact, query, analyze and evaluate MementoMaps: sorted
//! summaries of which URI sub-trees a web archive holds, and how often.

pub mod analytics;
pub mod cli;
pub mod compactor;
pub mod config;
pub mod discovery;
pub mod error;
pub mod evaluator;
pub mod lookup;
pub mod profile;
pub mod surt;
pub mod sweep;
pub mod ukvs;

pub use error::{Error, Result};
