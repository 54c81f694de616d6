//! Files, configuration and commands around `stgat-core`: order-log CSV
//! ingestion, the on-disk corpus and checkpoint formats, metric reports and
//! the `stgat` command line.

pub mod checkpoint;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod orders;
pub mod pipeline;
pub mod reports;

pub use config::RunConfig;
pub use error::{CliError, Result};
