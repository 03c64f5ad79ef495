//! Hierarchical recognition of grid terminal types from packet captures.
//!
//! The pipeline reads a pcap, assembles bidirectional TCP flows, keeps the long
//! connections, and splits every flow into fixed time segments. Flow-level
//! statistics are combined with a multi-hot encoding of which segment clusters
//! occur in the flow; segment clusters are learned over segment statistics
//! joined with an autoencoder embedding of the segment's behavior codes. A
//! gradient-boosted tree ensemble (or one of several baselines) then predicts
//! the terminal type.

pub mod autoencoder;
pub mod behavior;
pub mod classifier;
pub mod commands;
pub mod cluster;
pub mod config;
pub mod encoding;
pub mod error;
pub mod features;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod pcap;
pub mod persist;
pub mod pipeline;
pub mod synthgen;
pub mod tree;

pub use error::{Error, Result};
