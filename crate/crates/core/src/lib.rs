//! Benchmarking engine for neural-signal decoding models.

pub mod baseline;
pub mod bench;
pub mod config;
pub mod data;
pub mod domain;
pub mod dsp;
pub mod metrics;
pub mod optim;
pub mod protocol;
pub mod ranking;
pub mod split;
