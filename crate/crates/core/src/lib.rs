//! Sequential local adiabatic preparation of injective PEPS and purified
//! Gibbs states, with the numerical checks that go with it.

pub mod cluster;
pub mod error;
pub mod evolve;
pub mod lattice;
pub mod linop;
pub mod model;
pub mod parent;
pub mod schedule;

pub use error::{Error, Result};
