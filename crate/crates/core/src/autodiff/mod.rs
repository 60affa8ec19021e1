//! Reverse-mode differentiation on a dynamic tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. The
//! tape is rebuilt for each training step, so the cascade count and the
//! diffeomorphic flag can change freely between calls. Complex cotangents
//! use the convention `∂L/∂re + i ∂L/∂im`, under which the backward rule of
//! a complex-linear map is its conjugate transpose.

mod gradcheck;
mod graph;
mod ops;

pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, KINK_TOLERANCE, GradCheckReport, ProbeResult};
pub use graph::{Gradients, Graph, Value, Var};
