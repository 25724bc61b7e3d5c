//! Optimal control of mechanical systems through the Riemannian structure of
//! their mass matrix.
//!
//! A configuration-dependent mass matrix `M(q)` is a Riemannian metric on the
//! configuration space. This crate evaluates the geometry that metric induces
//! (connection coefficients, curvature tensor, covariant derivatives), writes
//! the controlled equations of motion and the adjoint equations of the
//! optimal-control problem in covariant form, and solves the resulting
//! two-point boundary value problem by single shooting. An independent
//! direct-transcription optimizer over the same cost provides a cross-check
//! for every indirect solution.
//!
//! Start with [`models::build_model`] for a built-in system, pick a cost from
//! [`cost::CostModel`], and hand both to [`shooting::shoot`]. The `examples/`
//! directory walks through each capability; the `covoc` binary drives the
//! same pipeline from scenario files.

pub mod cost;
pub mod direct;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod models;
pub mod output;
pub mod scenario;
pub mod shooting;
pub mod tensor;

pub mod cli;

pub use error::{Error, Result};
