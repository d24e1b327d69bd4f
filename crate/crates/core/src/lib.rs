//! Learned scale-time ODE solvers for sampling probability-flow models.
//!
//! A bespoke solver wraps a base Runge-Kutta step in a learned change of
//! coordinates `x̄(r) = s_r x(t_r)`. Its parameters are fitted by minimizing an
//! upper bound on the global RMSE against accurately solved reference paths.

mod error;
pub mod evaluation;
pub mod fields;
pub mod json;
pub mod loss;
pub mod scheme;
pub mod schedulers;
pub mod solvers;
pub mod training;
pub mod vector;

pub use error::{BespokeError, Result};
