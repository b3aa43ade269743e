//! Compartmental CO2 network: an anaerobic digester emitting into the
//! atmosphere, a microalgae culture absorbing from it, a finite-time optimal
//! controller for the digester, and a random-search light controller for the
//! culture.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ars;
pub mod config;
pub mod control;
pub mod digester;
pub mod env;
pub mod error;
pub mod microalgae;
pub mod network;
pub mod ode;
pub mod scenario;

pub use config::Config;
pub use error::{Error, Result};
