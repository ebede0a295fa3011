//! Unified discrete-time and continuous-time diffusion for categorical data.
//!
//! The forward process resamples each element from a stationary distribution
//! at a schedule-controlled rate. Closed-form posteriors, backward steps and
//! training losses are provided for both time modes, alongside brute-force
//! oracles that check every closed form on small state spaces.

pub mod backward;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod forward;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod sampler;
pub mod schedule;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
