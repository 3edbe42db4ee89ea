//! Benchmark driver: experiment configuration, orchestration and reporting
//! around the core library. The `uqbench` binary is a thin wrapper over
//! these modules; integration tests drive them directly.

pub mod compare;
pub mod config;
pub mod evaluate;
pub mod pipeline;
pub mod rank;
pub mod record;
pub mod report;
pub mod suites;
