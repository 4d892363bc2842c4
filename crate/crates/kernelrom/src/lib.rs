//! Non-intrusive reduced-order modeling via regularized kernel interpolation.
//!
//! The crate builds data-driven reduced-order models (ROMs) of dynamical
//! systems by interpolating reduced state dynamics in a reproducing kernel
//! Hilbert space. Feature-map kernels yield ROMs with explicit polynomial
//! operator structure, RBF kernels yield generic nonlinear ROMs, and hybrids
//! combine the two with the RBF acting as a closure term. Alongside the
//! kernel ROMs the crate provides POD and greedy quadratic-manifold dimension
//! reduction, operator-inference and intrusive Galerkin baselines, stiff time
//! integration, and computable a posteriori error bounds.

pub mod bounds;
pub mod error;
pub mod fom;
pub mod harness;
pub mod interp;
pub mod kernels;
mod linalg;
pub mod metrics;
pub mod odeint;
pub mod reduce;
pub mod rom;

pub use error::{Error, Result};
pub use kernels::{FeatureMapSpec, KernelSpec, RbfGenerator, RbfSpec};
