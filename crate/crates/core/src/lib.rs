//! Spin squeezing of a two-mode condensate by quantum non-demolition
//! detection of light passing through both wells.
//!
//! The atomic state lives in the `N + 1` dimensional Fock basis `|k>` with
//! `k` atoms in the left well. [`pure_measure`] computes exact conditional
//! states for a single photon-counting event, [`master_eq`] evolves the
//! hybrid atom-light coefficients under tunneling and dephasing, and
//! [`husimi`] renders states on the Bloch sphere.

pub mod error;
pub mod husimi;

pub mod logmath;
pub mod master_eq;
pub mod pure_measure;
pub mod spin_core;
pub mod validation;

pub use error::{Error, Result};
