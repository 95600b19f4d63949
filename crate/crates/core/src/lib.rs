//! Avatar fingerprinting: identity verification of synthetic talking-head
//! videos from motion dynamics, and the benchmark protocol around it.

pub mod benchmark;
pub mod catalog;
pub mod embedder;
pub mod evaluation;
pub mod feature_store;
pub mod protocol;
pub mod runner;
pub mod scoring;
pub mod seed;
pub mod synthbench;
