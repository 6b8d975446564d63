//! Deterministic simulator for federated averaging with local differential
//! privacy and SecAgg+ secure aggregation.

pub mod cli;
pub mod config;
pub mod data;
pub mod dp;
pub mod field;
pub mod harness;
pub mod model;
pub mod orchestrator;
pub mod quantize;
pub mod rng;
pub mod secagg;
pub mod stats;
pub mod types;
