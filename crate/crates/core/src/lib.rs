//! Finite-element simulation of the multidomain electrodiffusion model of
//! brain tissue in one space dimension.

pub mod checkpoint;
pub mod config;
pub mod constitutive;
pub mod csd;
pub mod dual;
pub mod error;
pub mod fem;
pub mod membrane;
pub mod ode;
pub mod pde;
pub mod report;
pub mod splitting;
pub mod verification;
pub mod state;

pub use error::{Error, Result};
