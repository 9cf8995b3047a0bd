//! Numerical toolkit for time observables on symplectic dynamical systems.
//!
//! * [`geometry`]: phase spaces, scalar fields, Hamiltonian vector fields and
//!   Poisson brackets in a global Darboux chart.
//! * [`flow`]: integral curves, section crossings, near-returns and escape
//!   (incompleteness) detection.
//! * [`clockwork`]: timeliness checks, local clock construction, uniqueness
//!   up to constants of motion, energy descent and incompleteness
//!   certificates, and the recurrence obstruction.
//! * [`kahler`]: finite-dimensional quantum mechanics on complex projective
//!   space with its Kähler structure, Killing checks and the obstruction to
//!   self-adjoint clocks.

pub mod clockwork;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod kahler;

pub use error::{Error, Result};
