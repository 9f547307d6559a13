#![no_std]
extern crate alloc;

pub mod demchenko;
pub mod elliptic;
pub mod full_flow;
pub mod error;
pub mod hamiltonization;
pub mod integrals;
pub mod integrator;
pub mod model;
pub mod quadrature;
pub mod reduced;
pub mod so_n;

pub use error::{Error, Result, SpecError};
