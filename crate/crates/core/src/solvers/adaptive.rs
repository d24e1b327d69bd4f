//! Dormand-Prince 5(4) with PI step-size control.

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::vector::l2_norm;

use super::check_divergence;
use super::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub h0: f64,
    pub safety: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            t_start: 0.0,
            t_end: 1.0,
            h0: 1e-3,
            safety: 0.9,
            h_min: 1e-10,
            h_max: 0.5,
            max_steps: 100_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension (Hairer, Norsett & Wanner, DOPRI5 dense output)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller (Hairer & Wanner's DOPRI5 defaults)
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Dense adaptive solve on `[0, t_end]` with the default controller settings.
pub fn solve_adaptive<F: VelocityField + ?Sized>(
    f: &F,
    x0: &[f64],
    rtol: f64,
    atol: f64,
    t_end: f64,
) -> Result<Trajectory> {
    solve_adaptive_with(
        f,
        x0,
        &AdaptiveOptions {
            rtol,
            atol,
            t_end,
            ..AdaptiveOptions::default()
        },
    )
}

pub fn solve_adaptive_with<F: VelocityField + ?Sized>(f: &F, x0: &[f64], opts: &AdaptiveOptions) -> Result<Trajectory> {
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(BespokeError::InvalidParameter(format!(
            "tolerances must be positive, got rtol = {}, atol = {}",
            opts.rtol, opts.atol
        )));
    }
    if !(opts.t_end > opts.t_start) {
        return Err(BespokeError::InvalidParameter(format!(
            "empty time span [{}, {}]",
            opts.t_start, opts.t_end
        )));
    }
    let d = x0.len();
    let x0_norm = l2_norm(x0);
    let mut t = opts.t_start;
    let mut y = x0.to_vec();
    let mut k1 = f.eval(t, &y)?;

    let mut traj = Trajectory::start(t, y.clone(), k1.clone(), opts.rtol, opts.atol);

    let mut h = opts.h0.min(opts.h_max).min(opts.t_end - t);
    let mut fac_old = 1e-4f64;
    let mut last_rejected = false;
    let mut attempts = 0usize;

    let mut stage = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    while t < opts.t_end {
        attempts += 1;
        if attempts > opts.max_steps {
            return Err(BespokeError::MaxSteps {
                max_steps: opts.max_steps,
                t,
            });
        }
        let remaining = opts.t_end - t;
        let is_last = h >= remaining * (1.0 - 1e-12);
        if is_last {
            h = remaining;
        } else if h < opts.h_min {
            return Err(BespokeError::StepUnderflow { t, h });
        }

        for j in 0..d {
            stage[j] = y[j] + h * A21 * k1[j];
        }
        let k2 = f.eval(t + C2 * h, &stage)?;
        for j in 0..d {
            stage[j] = y[j] + h * (A31 * k1[j] + A32 * k2[j]);
        }
        let k3 = f.eval(t + C3 * h, &stage)?;
        for j in 0..d {
            stage[j] = y[j] + h * (A41 * k1[j] + A42 * k2[j] + A43 * k3[j]);
        }
        let k4 = f.eval(t + C4 * h, &stage)?;
        for j in 0..d {
            stage[j] = y[j] + h * (A51 * k1[j] + A52 * k2[j] + A53 * k3[j] + A54 * k4[j]);
        }
        let k5 = f.eval(t + C5 * h, &stage)?;
        for j in 0..d {
            stage[j] = y[j] + h * (A61 * k1[j] + A62 * k2[j] + A63 * k3[j] + A64 * k4[j] + A65 * k5[j]);
        }
        let t_new = if is_last { opts.t_end } else { t + h };
        let k6 = f.eval(t_new, &stage)?;
        for j in 0..d {
            y_new[j] = y[j] + h * (A71 * k1[j] + A73 * k3[j] + A74 * k4[j] + A75 * k5[j] + A76 * k6[j]);
        }
        let k7 = f.eval(t_new, &y_new)?;

        let mut sq = 0.0;
        for j in 0..d {
            let e = h * (E1 * k1[j] + E3 * k3[j] + E4 * k4[j] + E5 * k5[j] + E6 * k6[j] + E7 * k7[j]);
            let sc = opts.atol + opts.rtol * y[j].abs().max(y_new[j].abs());
            sq += (e / sc) * (e / sc);
        }
        let err = if d == 0 { 0.0 } else { (sq / d as f64).sqrt() };
        if !err.is_finite() {
            return Err(BespokeError::Divergence {
                step: traj.len(),
                norm: l2_norm(&y_new),
            });
        }

        if err <= 1.0 {
            check_divergence(&y_new, x0_norm, traj.len())?;
            let correction: Vec<f64> = (0..d)
                .map(|j| h * (D1 * k1[j] + D3 * k3[j] + D4 * k4[j] + D5 * k5[j] + D6 * k6[j] + D7 * k7[j]))
                .collect();
            t = t_new;
            y.copy_from_slice(&y_new);
            k1 = k7;
            traj.push_dense(t, y.clone(), k1.clone(), correction);
            let mut h_new = if err == 0.0 {
                opts.h_max
            } else {
                let fac11 = err.powf(EXPO1);
                let fac = (fac11 / fac_old.powf(BETA) / opts.safety).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                h / fac
            };
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            last_rejected = false;
            h = h_new.min(opts.h_max);
        } else {
            let fac11 = err.powf(EXPO1);
            h /= (fac11 / opts.safety).min(1.0 / FAC_MIN);
            last_rejected = true;
            traj.rejected_steps += 1;
        }
    }
    Ok(traj)
}
