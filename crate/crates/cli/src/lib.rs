//! Command-line front end for the sparseconv engine: network configs,
//! synthetic inputs, oracle validation, strategy tuning and benchmarking.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod network;
pub mod synth;
pub mod tune;

pub use config::{NetworkConfig, TOY_NETWORK};
pub use network::{Network, RunOptions};
