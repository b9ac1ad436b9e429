//! Simulation and noise learning for a fixed-frequency transmon.
//!
//! The crate models the qubit as a driven multi-level system coupled to two
//! Ohmic baths and an ensemble of classical telegraph fluctuators, propagates
//! it with a time-convolutionless (Redfield) master equation, and fits the
//! bath parameters to measured decay curves.

pub mod bath;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod pulse;
pub mod schedules;
pub mod transmon;
pub mod units;

pub use error::{Error, Result};
