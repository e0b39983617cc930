//! Deterministic 2D mini-city simulator and evaluation harness.
//!
//! The crate covers occupancy-grid mapping with a Rao-Blackwellized particle
//! filter, a simulated 2D LiDAR with depth clustering and tracking at a smart
//! intersection, the vehicle-to-infrastructure warning protocol over a lossy
//! channel, and the Monte-Carlo crash-rate and stopping-distance experiments.

pub mod city;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod gridio;
pub mod mapping;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod slam;
pub mod v2i;
pub mod vehicle;

pub use error::{Error, Result};
