//! Simulation lab for distributed SGD over an unreliable network.
//!
//! The crate implements model averaging through a block-partitioned
//! reduce-scatter / all-gather in which every message may be lost, the
//! moment analysis of the induced random mixing matrices, synthetic
//! objectives with known constants, a trainer that checks the convergence
//! bounds empirically, and a packet-level simulator for co-locating
//! loss-tolerant learning traffic with latency-sensitive web traffic.

pub mod config;
pub mod error;
pub mod mixing;
pub mod netsim;
pub mod objectives;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
