//! Damped projected integral control of constrained, stable plants.
//!
//! The building blocks are a weighted inner product ([`metric`]), convex
//! constraint sets with weighted projections ([`sets`]), forward-backward
//! solvers for monotone variational inequalities ([`vi`]), plant models
//! ([`plants`]), the controllers themselves ([`controller`]) and closed-loop
//! simulation with steady-state certificates ([`closed_loop`]).

pub mod closed_loop;
pub mod controller;
pub mod error;
pub mod metric;
pub mod plants;
pub mod sets;
pub mod vi;

pub use error::{Error, Result};
pub use metric::Metric;
pub use sets::ConvexSet;
