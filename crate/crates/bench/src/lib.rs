//! Benchmark plumbing around `spp-core`: clustered synthetic scenes, seeded
//! weights in a single-file container, a per-stage timing harness and report
//! writers.

pub mod error;
pub mod harness;
pub mod report;
pub mod synthetic;
pub mod weights;

pub use error::{BenchError, Result};
