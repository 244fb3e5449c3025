//! Simulation laboratory for harness processes on finite boxes of `Z^d`.
//!
//! The crate builds the process three independent ways and lets them check
//! each other:
//!
//! * [`harris`] — an event-driven engine driven by marked Poisson streams,
//!   updating each height at rate 1 to a kernel-weighted average of its
//!   neighbours plus centred noise;
//! * [`dual`] — the backward absorbed random walk whose exact conditional
//!   occupation weights express the same height as a weighted sum of past
//!   noises;
//! * [`gibbs`] — the Gaussian field that is stationary and
//!   reversible for the dynamics under Gaussian noise, built from the
//!   absorbed-walk Green function.
//!
//! [`dwalk`] supplies closed-form variance integrals through an auxiliary
//! difference walk, and [`experiments`] wires everything into seeded,
//! tolerance-checked reports behind the `harness-lab` CLI.

pub mod dual;
pub mod dwalk;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod harris;
pub mod lattice;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Boundary, HeightField, Kernel, Noise, Region, Site};
