//! Continuous-time counterfactual outcome estimation for interacting units.
//!
//! Pieces, bottom up:
//! - [`graph`]: static interaction graph, interference summaries, synthetic
//!   topologies and partitions.
//! - [`diff`]: dense reverse-mode differentiation, gradient reversal, Adam.
//! - [`sim`]: PK-PD observational data simulator and counterfactual oracle.
//! - [`model`]: treatment-induced graph ODE with adversarial balancing heads.
//! - [`train`]: alternating training, counterfactual evaluation, balance
//!   diagnostics, sweeps.
//! - [`config`]: run configuration shared by the CLI.

pub mod config;
pub mod diff;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
