//! Continuous-time neural hazard models with Gauss-Legendre cumulative hazards.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod simulation;
pub mod training;
