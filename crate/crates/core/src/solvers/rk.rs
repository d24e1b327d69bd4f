use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::vector::{axpy, l2_norm};

use super::check_divergence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Rk1,
    Rk2,
    Rk4,
}

impl StepKind {
    pub fn evals_per_step(self) -> usize {
        match self {
            StepKind::Rk1 => 1,
            StepKind::Rk2 => 2,
            StepKind::Rk4 => 4,
        }
    }

    pub fn order(self) -> usize {
        self.evals_per_step()
    }

    pub fn name(self) -> &'static str {
        match self {
            StepKind::Rk1 => "rk1",
            StepKind::Rk2 => "rk2",
            StepKind::Rk4 => "rk4",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rk1" => Ok(StepKind::Rk1),
            "rk2" => Ok(StepKind::Rk2),
            "rk4" => Ok(StepKind::Rk4),
            other => Err(BespokeError::InvalidParameter(format!("unknown step kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub t_next: f64,
    pub x_next: Vec<f64>,
}

// Allow t + h to overshoot 1 by accumulated roundoff.
const END_SLACK: f64 = 1e-12;

fn check_step(t: f64, h: f64) -> Result<()> {
    if !(h > 0.0) || t + h > 1.0 + END_SLACK {
        return Err(BespokeError::InvalidParameter(format!(
            "step needs h > 0 and t + h <= 1, got t = {t}, h = {h}"
        )));
    }
    Ok(())
}

/// Euler: `x + h u_t(x)`.
pub fn rk1_step<F: VelocityField + ?Sized>(f: &F, t: f64, x: &[f64], h: f64) -> Result<StepResult> {
    check_step(t, h)?;
    let k1 = f.eval(t, x)?;
    let mut x_next = x.to_vec();
    axpy(h, &k1, &mut x_next);
    Ok(StepResult { t_next: t + h, x_next })
}

/// Midpoint: `x + h u_{t+h/2}(x + (h/2) u_t(x))`.
pub fn rk2_step<F: VelocityField + ?Sized>(f: &F, t: f64, x: &[f64], h: f64) -> Result<StepResult> {
    check_step(t, h)?;
    let k1 = f.eval(t, x)?;
    let mut mid = x.to_vec();
    axpy(0.5 * h, &k1, &mut mid);
    let k2 = f.eval(t + 0.5 * h, &mid)?;
    let mut x_next = x.to_vec();
    axpy(h, &k2, &mut x_next);
    Ok(StepResult { t_next: t + h, x_next })
}

/// Classical fourth-order Runge-Kutta.
pub fn rk4_step<F: VelocityField + ?Sized>(f: &F, t: f64, x: &[f64], h: f64) -> Result<StepResult> {
    check_step(t, h)?;
    let k1 = f.eval(t, x)?;
    let mut y = x.to_vec();
    axpy(0.5 * h, &k1, &mut y);
    let k2 = f.eval(t + 0.5 * h, &y)?;
    y.copy_from_slice(x);
    axpy(0.5 * h, &k2, &mut y);
    let k3 = f.eval(t + 0.5 * h, &y)?;
    y.copy_from_slice(x);
    axpy(h, &k3, &mut y);
    let k4 = f.eval((t + h).min(1.0), &y)?;
    let mut x_next = x.to_vec();
    for j in 0..x.len() {
        x_next[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    Ok(StepResult { t_next: t + h, x_next })
}

pub fn step<F: VelocityField + ?Sized>(kind: StepKind, f: &F, t: f64, x: &[f64], h: f64) -> Result<StepResult> {
    match kind {
        StepKind::Rk1 => rk1_step(f, t, x, h),
        StepKind::Rk2 => rk2_step(f, t, x, h),
        StepKind::Rk4 => rk4_step(f, t, x, h),
    }
}

/// Nodes visited by [`solve_fixed`].
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl FixedSolution {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("solution has at least the initial node")
    }

    pub fn into_final_state(mut self) -> Vec<f64> {
        self.states.pop().expect("solution has at least the initial node")
    }
}

/// `n` uniform steps of `kind` from `(0, x0)` to `t = 1`.
pub fn solve_fixed<F: VelocityField + ?Sized>(f: &F, kind: StepKind, n: usize, x0: &[f64]) -> Result<FixedSolution> {
    solve_fixed_on(f, kind, n, x0, 0.0, 1.0)
}

pub fn solve_fixed_on<F: VelocityField + ?Sized>(
    f: &F,
    kind: StepKind,
    n: usize,
    x0: &[f64],
    t_start: f64,
    t_end: f64,
) -> Result<FixedSolution> {
    if n == 0 {
        return Err(BespokeError::InvalidParameter("solve_fixed needs n >= 1".into()));
    }
    if !(t_end > t_start) {
        return Err(BespokeError::InvalidParameter(format!(
            "empty time span [{t_start}, {t_end}]"
        )));
    }
    let h = (t_end - t_start) / n as f64;
    let x0_norm = l2_norm(x0);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t_start);
    states.push(x0.to_vec());
    for i in 0..n {
        let t = t_start + (t_end - t_start) * i as f64 / n as f64;
        let next = step(kind, f, t, &states[i], h)?;
        check_divergence(&next.x_next, x0_norm, i)?;
        times.push(if i + 1 == n { t_end } else { t_start + (t_end - t_start) * (i + 1) as f64 / n as f64 });
        states.push(next.x_next);
    }
    Ok(FixedSolution { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{affine_oracle_solution, GmmField, LinearField, ZeroField};

    #[test]
    fn rk1_examples() {
        let f = LinearField { dim: 1, rate: 1.0 };
        let r = rk1_step(&f, 0.0, &[1.0], 0.1).unwrap();
        assert_eq!(r.t_next, 0.1);
        assert!((r.x_next[0] - 1.1).abs() < 1e-15);
        let z = rk1_step(&ZeroField { dim: 2 }, 0.3, &[1.0, 2.0], 0.2).unwrap();
        assert_eq!(z.x_next, vec![1.0, 2.0]);
    }

    #[test]
    fn rk2_examples() {
        let f = LinearField { dim: 1, rate: 1.0 };
        let r = rk2_step(&f, 0.0, &[1.0], 0.1).unwrap();
        assert!((r.x_next[0] - 1.105).abs() < 1e-15);
        let z = rk2_step(&ZeroField { dim: 1 }, 0.0, &[4.0], 0.5).unwrap();
        assert_eq!(z.x_next, vec![4.0]);
    }

    #[test]
    fn step_rejects_bad_sizes() {
        let f = ZeroField { dim: 1 };
        assert!(rk1_step(&f, 0.5, &[0.0], 0.0).is_err());
        assert!(rk2_step(&f, 0.95, &[0.0], 0.1).is_err());
    }

    #[test]
    fn euler_converges_on_affine_oracle() {
        let f = GmmField::affine_standard_normal(1);
        let sol = solve_fixed(&f, StepKind::Rk1, 1000, &[1.0]).unwrap();
        assert!((sol.final_state()[0] - 1.0).abs() <= 5e-3);
    }

    #[test]
    fn midpoint_converges_on_affine_oracle() {
        let f = GmmField::affine_standard_normal(1);
        let sol = solve_fixed(&f, StepKind::Rk2, 20, &[1.0]).unwrap();
        assert!((sol.final_state()[0] - 1.0).abs() <= 2e-3);
        assert_eq!(*sol.times.last().unwrap(), 1.0);
    }

    #[test]
    fn midpoint_local_error_on_affine_field() {
        let f = GmmField::affine_standard_normal(1);
        let t0 = 0.3;
        let x0 = affine_oracle_solution(&f, &[1.0], t0).unwrap();
        let hs = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let r = rk2_step(&f, t0, &x0, h).unwrap();
                (r.x_next[0] - affine_oracle_solution(&f, &[1.0], t0 + h).unwrap()[0]).abs()
            })
            .collect();
        // For this field the h^3 term of the midpoint local error vanishes
        // identically, so the observed order is one higher than in general.
        let slope = crate::evaluation::log_log_slope(&hs, &errs);
        assert!((slope - 4.0).abs() <= 0.3, "slope {slope}");
    }

    #[test]
    fn solve_fixed_base_cases() {
        let z = solve_fixed(&ZeroField { dim: 3 }, StepKind::Rk4, 7, &[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(z.final_state(), &[1.0, -1.0, 2.0]);
        let f = LinearField { dim: 1, rate: 0.7 };
        let one = solve_fixed(&f, StepKind::Rk1, 1, &[2.0]).unwrap();
        assert_eq!(one.final_state(), rk1_step(&f, 0.0, &[2.0], 1.0).unwrap().x_next.as_slice());
        assert!(solve_fixed(&f, StepKind::Rk1, 0, &[2.0]).is_err());
    }

    #[test]
    fn solve_fixed_reports_divergence_step() {
        let f = LinearField { dim: 1, rate: 200.0 };
        match solve_fixed(&f, StepKind::Rk1, 10, &[1.0]) {
            Err(BespokeError::Divergence { step, .. }) => assert!(step < 10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
