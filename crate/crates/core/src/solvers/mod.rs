//! Fixed-step Runge-Kutta solvers, an adaptive Dormand-Prince solver with
//! dense output, and the trajectory type they produce.

mod adaptive;
mod rk;
mod trajectory;

pub use adaptive::{solve_adaptive, solve_adaptive_with, AdaptiveOptions};
pub use rk::{rk1_step, rk2_step, rk4_step, solve_fixed, solve_fixed_on, step, FixedSolution, StepKind, StepResult};
pub use trajectory::{Interpolation, Trajectory};

/// Abort threshold for `||x||`, relative to `1 + ||x0||`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

pub(crate) fn check_divergence(x: &[f64], x0_norm: f64, step: usize) -> crate::Result<()> {
    let norm = crate::vector::l2_norm(x);
    if !norm.is_finite() || norm > DIVERGENCE_FACTOR * (1.0 + x0_norm) {
        return Err(crate::BespokeError::Divergence { step, norm });
    }
    Ok(())
}
