//! Host-side companion to [`lbtk_core`]: configuration, threaded
//! multi-rank execution over channel-backed halo links, benchmark
//! reporting, artifact formats, and the `lbtk` command-line tool.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod executor;
pub mod report;
pub mod runner;
pub mod transport;
