//! Discrete-event Monte-Carlo simulation of loss and cost in replicated,
//! audited digital collections.
//!
//! A [`scenario::Scenario`] describes a collection, four layers of threats
//! (sector errors, glitches, server failures, correlated shocks) and the
//! preservation policy meant to survive them. [`sim::run_once`] simulates
//! one replication; [`runner`] replicates, sweeps and searches over
//! policies; [`analytics`] holds the closed-form results used to check the
//! simulator.

pub mod analytics;
pub mod cost;
pub mod engine;
pub mod error;
pub mod output;
pub mod policy;
pub mod risk;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod state;
pub mod stats;
pub mod units;

pub use error::{Error, Result};
pub use scenario::Scenario;
