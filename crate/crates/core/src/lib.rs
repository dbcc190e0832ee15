//! Numerical laboratory for a one-dimensional thermoelastic rod with an
//! internal delay in the elastic stress and Kelvin–Voigt damping.
//!
//! The delayed strain is carried by a transport variable `z(x, ρ, t)`,
//! which turns the system into an autonomous evolution `U′ = A U` on the
//! state `(u, u_t, z, θ)`. The crate discretizes `A`, checks its energy
//! estimate, locates its spectrum, bounds its resolvent and measures the
//! exponential decay of trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coercivity;
pub mod error;
pub mod generator;
pub mod grid;
pub mod snapshot;
pub mod spectral;
pub mod timestepper;

pub use coercivity::{ComplexFrequency, PhysicalParams};
pub use error::{Error, Result};
pub use generator::{assemble, GeneratorMatrix};
pub use grid::{GridSpec, Layout, StateVector, ThetaBc};
