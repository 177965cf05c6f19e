//! Certified generalisation bounds for interpolating networks.
//!
//! The pipeline: sample a point cloud from a known distribution
//! ([`measures`]), fit a small network through the samples ([`network`],
//! [`training`]), then bound the population risk by an empirical term plus a
//! Lipschitz constant times a Wasserstein matching term ([`transport`],
//! [`bounds`]). The [`experiments`] module drives the sweeps that check the
//! bound and its sample-rate behaviour end to end.

pub mod bounds;
pub mod experiments;
pub mod measures;
pub mod network;
pub mod seed;
pub mod training;
pub mod transport;

pub use seed::Seed;
