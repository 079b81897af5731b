//! Std companion of `sls-core`: file formats, CSV ingest, configuration,
//! parallel drivers and the benchmark harness behind the `sls` binary.

pub mod bench;
pub mod config;
pub mod data_io;
pub mod error;
pub mod model_file;
pub mod parallel;
pub mod pipeline;
pub mod trace_io;

pub use error::{Error, Result};
