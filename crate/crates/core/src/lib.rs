//! Simulation of a quantum-dot exciton qubit in a bimodal micropillar cavity
//! driven by few-photon coherent pulses or single-photon Fock states.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod fock;
mod kernel;
pub mod model;
pub mod ode;
pub mod operators;
pub mod spectra;

pub use error::{Error, Result};
