//! Library surface of the experiment CLI: configuration parsing, experiment
//! orchestration, and deterministic plotting. The `tlq` binary is a thin
//! wrapper over these functions; integration and acceptance tests call them
//! directly.

pub mod config;
pub mod experiments;
pub mod plot;
