//! Federated signal-map privacy laboratory.
//!
//! A small RSRP regression network is trained with online federated rounds
//! ([`fed`]), each client's round update is attacked by gradient matching to
//! recover a location ([`attack`]), clients may curate their batches or add
//! noise ([`defense`]), and [`metrics`] scores how much leaked.

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod fed;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;

pub use error::{FedmapError, Result};
