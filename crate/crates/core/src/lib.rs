//! Deformable image registration with band-limited displacement fields
//! predicted in the Fourier domain.

pub mod autodiff;
pub mod cli;
pub mod deform;
pub mod error;
pub mod fourier;
pub mod io;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
