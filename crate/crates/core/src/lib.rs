//! Transmitter identification from power-amplifier nonlinearity.
//!
//! The crate simulates a population of transmitters whose amplifiers follow
//! the Saleh AM-AM model, passes their packets through AWGN or a dynamic
//! channel, extracts window-averaged spectral features and trains small
//! neural classifiers to tell the transmitters apart.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod features;
pub mod modelgen;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod saleh;
pub mod sigchain;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use rng::SimRng;
