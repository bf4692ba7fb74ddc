//! Forward and adjoint SBP-SAT solver for two-dimensional antiplane-shear
//! dynamic rupture on rate-and-state faults, with exact discrete misfit
//! gradients and an L-BFGS inversion driver.

// `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod adjoint;
pub mod config;
pub mod error;
pub mod forward;
pub mod friction;
pub mod geometry;
pub mod gradcheck;
pub mod inversion;
pub mod io;
pub mod lbfgs;
pub mod pipeline;
pub mod receivers;
pub mod sbp;

pub use error::{Error, Result};
