//! Configuration, persistence and orchestration behind the `rothe` binary.

pub mod config;
pub mod io;
pub mod sweep;
