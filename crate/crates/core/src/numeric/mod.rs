//! Dense kernels, random streams, Adam and finite-difference gradient checks.

mod adam;
mod gradcheck;
mod linalg;
mod matrix;
mod params;
mod rng;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use linalg::Cholesky;
pub use matrix::Matrix;
pub use params::ParamSet;
pub use rng::RngStream;
