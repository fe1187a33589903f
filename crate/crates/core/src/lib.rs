//! Spontaneous emission of two distant qubits coupled to an Ohmic waveguide.
//!
//! The [`dynamics`] module propagates a multi-Davydov-D1 variational state;
//! [`analytic`] evaluates the closed-form transformed-RWA and
//! second-order-perturbation spectra; [`analysis`] compares spectra.

pub mod analysis;
pub mod analytic;
pub mod bath;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod quadrature;
pub mod spectrum;
pub mod state;

pub use error::{Error, Result};
