//! Deterministic simulator for cooperative perception, tracking and
//! multi-modal motion prediction among connected automated vehicles.
//!
//! Data flows frame by frame: each CAV senses its surroundings, optionally
//! exchanges detection evidence over a modeled V2X channel, fuses it, tracks
//! objects with a Kalman filter, forecasts each track as a Gaussian mixture,
//! and optionally aggregates forecasts received from other CAVs.

pub mod aggregation;
pub mod error;
pub mod geometry;
pub mod gmm;
pub mod metrics;
pub mod pipeline;
pub mod prediction;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod tracking;
pub mod v2x;

pub use error::{Error, Result};
