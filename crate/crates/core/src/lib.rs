//! Synthesized learning for edge/central intrusion detection.
//!
//! Small autoencoders are trained on disjoint edge partitions, their layers
//! are scored by how much training moved them, and a deeper central model is
//! assembled from selected trained layers and fine-tuned. A FedAvg baseline
//! and a reconstruction-error detector complete the comparison.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, the CLI and the
//! benchmark harness live in the `sls` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod fl;
pub mod analysis;
pub mod convergence;
pub mod data;
pub mod detector;
pub mod edge;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod synthesis;

pub use error::{Error, Result};
pub use matrix::Matrix;
