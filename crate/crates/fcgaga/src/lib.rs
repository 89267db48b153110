//! IO, configuration, training orchestration, and the CLI around the
//! in-memory engine in `fcgaga-core`.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod manifest;
pub mod panel_io;
pub mod trainer;
