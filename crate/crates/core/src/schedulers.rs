//! Gaussian-path schedulers `(alpha_t, sigma_t)`.
//!
//! Convention: noise at `t = 0`, data at `t = 1`, so `alpha(0) = 0`,
//! `sigma(0) = 1`, `alpha(1) = 1`, `sigma(1) = 0`, and the signal-to-noise
//! ratio `alpha/sigma` is strictly increasing.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};

pub const DEFAULT_VP_B_MAX: f64 = 20.0;
pub const DEFAULT_VP_B_MIN: f64 = 0.1;

/// A scheduler with analytic time derivatives.
pub trait Schedule: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn alpha(&self, t: f64) -> f64;
    fn sigma(&self, t: f64) -> f64;
    fn dalpha(&self, t: f64) -> f64;
    fn dsigma(&self, t: f64) -> f64;

    /// `sigma * dsigma`. Stays finite at `sigma = 0` for schedulers whose
    /// `dsigma` blows up there (VP).
    fn sigma_dsigma(&self, t: f64) -> f64 {
        self.sigma(t) * self.dsigma(t)
    }

    /// `ln(alpha) - ln(sigma)`; `-inf` at `t = 0`, `+inf` at `t = 1`.
    fn log_snr(&self, t: f64) -> f64 {
        self.alpha(t).ln() - self.sigma(t).ln()
    }

    fn snr(&self, t: f64) -> f64 {
        self.log_snr(t).exp()
    }

    /// `d/dt ln snr = alpha'/alpha - sigma sigma'/sigma^2`.
    fn dlog_snr(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        self.dalpha(t) / self.alpha(t) - self.sigma_dsigma(t) / (s * s)
    }

    /// `d/dt snr = (alpha' sigma^2 - alpha sigma sigma') / sigma^3`.
    fn dsnr(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        (self.dalpha(t) * s * s - self.alpha(t) * self.sigma_dsigma(t)) / (s * s * s)
    }
}

/// Built-in schedulers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scheduler {
    /// Conditional optimal transport: `alpha = t`, `sigma = 1 - t`.
    Ot,
    /// `alpha = sin(pi t / 2)`, `sigma = sin(pi (1 - t) / 2)`.
    Cosine,
    /// Variance preserving with `xi_s = exp(-s^2 (B - b) / 4 - s b / 2)`,
    /// `alpha_t = xi_{1-t}`, `sigma_t = sqrt(1 - xi_{1-t}^2)`.
    Vp { b_max: f64, b_min: f64 },
}

pub fn make_ot_scheduler() -> Scheduler {
    Scheduler::Ot
}

pub fn make_cosine_scheduler() -> Scheduler {
    Scheduler::Cosine
}

pub fn make_vp_scheduler(b_max: f64, b_min: f64) -> Result<Scheduler> {
    if !(b_min > 0.0 && b_max > b_min && b_max.is_finite()) {
        return Err(BespokeError::InvalidParameter(format!(
            "VP scheduler needs B > b > 0, got B = {b_max}, b = {b_min}"
        )));
    }
    Ok(Scheduler::Vp { b_max, b_min })
}

impl Scheduler {
    pub fn default_vp() -> Self {
        Scheduler::Vp {
            b_max: DEFAULT_VP_B_MAX,
            b_min: DEFAULT_VP_B_MIN,
        }
    }

    /// Look up a scheduler by its config name (`ot`, `cosine`, `vp`).
    pub fn from_name(name: &str, vp_b_max: Option<f64>, vp_b_min: Option<f64>) -> Result<Self> {
        match name {
            "ot" => Ok(Scheduler::Ot),
            "cosine" => Ok(Scheduler::Cosine),
            "vp" => make_vp_scheduler(
                vp_b_max.unwrap_or(DEFAULT_VP_B_MAX),
                vp_b_min.unwrap_or(DEFAULT_VP_B_MIN),
            ),
            other => Err(BespokeError::InvalidParameter(format!(
                "unknown scheduler '{other}' (expected ot, cosine or vp)"
            ))),
        }
    }

    pub fn shared(self) -> Arc<dyn Schedule> {
        Arc::new(self)
    }

    fn log_xi(b_max: f64, b_min: f64, s: f64) -> f64 {
        -0.25 * s * s * (b_max - b_min) - 0.5 * s * b_min
    }

    // xi_s and its derivative in s.
    fn xi(b_max: f64, b_min: f64, s: f64) -> (f64, f64) {
        let xi = Self::log_xi(b_max, b_min, s).exp();
        let dxi = xi * (-0.5 * s * (b_max - b_min) - 0.5 * b_min);
        (xi, dxi)
    }
}

impl Schedule for Scheduler {
    fn name(&self) -> String {
        match self {
            Scheduler::Ot => "ot".into(),
            Scheduler::Cosine => "cosine".into(),
            Scheduler::Vp { .. } => "vp".into(),
        }
    }

    fn alpha(&self, t: f64) -> f64 {
        match *self {
            Scheduler::Ot => t,
            Scheduler::Cosine => (FRAC_PI_2 * t).sin(),
            Scheduler::Vp { b_max, b_min } => Self::xi(b_max, b_min, 1.0 - t).0,
        }
    }

    fn sigma(&self, t: f64) -> f64 {
        match *self {
            Scheduler::Ot => 1.0 - t,
            Scheduler::Cosine => (FRAC_PI_2 * (1.0 - t)).sin(),
            Scheduler::Vp { b_max, b_min } => {
                // 1 - xi^2 = -expm1(2 ln xi), accurate as xi -> 1
                let log_xi = Self::log_xi(b_max, b_min, 1.0 - t);
                (-(2.0 * log_xi).exp_m1()).max(0.0).sqrt()
            }
        }
    }

    fn dalpha(&self, t: f64) -> f64 {
        match *self {
            Scheduler::Ot => 1.0,
            Scheduler::Cosine => FRAC_PI_2 * (FRAC_PI_2 * t).cos(),
            Scheduler::Vp { b_max, b_min } => -Self::xi(b_max, b_min, 1.0 - t).1,
        }
    }

    fn dsigma(&self, t: f64) -> f64 {
        match *self {
            Scheduler::Ot => -1.0,
            Scheduler::Cosine => -FRAC_PI_2 * (FRAC_PI_2 * (1.0 - t)).cos(),
            Scheduler::Vp { .. } => self.sigma_dsigma(t) / self.sigma(t),
        }
    }

    fn sigma_dsigma(&self, t: f64) -> f64 {
        match *self {
            // sigma^2 = 1 - alpha^2  =>  sigma sigma' = -alpha alpha'
            Scheduler::Vp { .. } => -self.alpha(t) * self.dalpha(t),
            _ => self.sigma(t) * self.dsigma(t),
        }
    }
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied scheduler built from closures.
pub struct FnScheduler {
    name: String,
    alpha: ScalarFn,
    sigma: ScalarFn,
    dalpha: ScalarFn,
    dsigma: ScalarFn,
}

impl FnScheduler {
    pub fn new(
        name: impl Into<String>,
        alpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dalpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dsigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            alpha: Box::new(alpha),
            sigma: Box::new(sigma),
            dalpha: Box::new(dalpha),
            dsigma: Box::new(dsigma),
        }
    }
}

impl fmt::Debug for FnScheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnScheduler").field("name", &self.name).finish()
    }
}

impl Schedule for FnScheduler {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn alpha(&self, t: f64) -> f64 {
        (self.alpha)(t)
    }
    fn sigma(&self, t: f64) -> f64 {
        (self.sigma)(t)
    }
    fn dalpha(&self, t: f64) -> f64 {
        (self.dalpha)(t)
    }
    fn dsigma(&self, t: f64) -> f64 {
        (self.dsigma)(t)
    }
}

const SNR_BISECTION_WIDTH: f64 = 1e-14;

/// Solve `snr(t) = y` for `t` in `(0, 1)`.
///
/// Bisection on `ln snr` down to a `1e-14` bracket, then two Newton steps
/// kept inside the bracket.
pub fn snr_inverse(s: &dyn Schedule, y: f64) -> Result<f64> {
    let lo_snr = s.snr(0.0);
    let hi_snr = s.snr(1.0);
    if !(y.is_finite() && y > lo_snr && y < hi_snr) {
        return Err(BespokeError::OutOfDomain {
            value: y,
            lo: lo_snr,
            hi: hi_snr,
        });
    }
    let target = y.ln();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > SNR_BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if s.log_snr(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..2 {
        let g = s.log_snr(t) - target;
        let dg = s.dlog_snr(t);
        if !(dg.is_finite() && dg > 0.0) {
            break;
        }
        let next = t - g / dg;
        if next > lo && next < hi {
            t = next;
        }
    }
    Ok(t)
}

/// Outcome of [`validate_scheduler`].
#[derive(Clone, Debug, Serialize)]
pub struct SchedulerReport {
    pub name: String,
    /// `|alpha(0)|, |sigma(1)|, |alpha(1) - 1|, |sigma(0) - 1|`
    pub boundary_residuals: [f64; 4],
    pub boundary_ok: bool,
    /// Grid times `t_j` where `snr(t_j) >= snr(t_{j+1})`.
    pub monotonicity_violations: Vec<f64>,
    pub max_derivative_rel_error: f64,
    pub derivative_ok: bool,
}

impl SchedulerReport {
    pub fn passed(&self) -> bool {
        self.boundary_ok && self.monotonicity_violations.is_empty() && self.derivative_ok
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    pub grid_points: usize,
    pub boundary_tol: f64,
    pub fd_step: f64,
    pub derivative_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            grid_points: 1001,
            boundary_tol: 1e-12,
            fd_step: 1e-6,
            derivative_tol: 1e-6,
        }
    }
}

pub fn validate_scheduler(s: &dyn Schedule) -> SchedulerReport {
    validate_scheduler_with(s, ValidationOptions::default())
}

pub fn validate_scheduler_with(s: &dyn Schedule, opts: ValidationOptions) -> SchedulerReport {
    let boundary_residuals = [
        s.alpha(0.0).abs(),
        s.sigma(1.0).abs(),
        (s.alpha(1.0) - 1.0).abs(),
        (s.sigma(0.0) - 1.0).abs(),
    ];
    let boundary_ok = boundary_residuals.iter().all(|r| *r <= opts.boundary_tol);

    let m = opts.grid_points.max(3);
    let grid: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();

    let log_snr: Vec<f64> = grid.iter().map(|&t| s.log_snr(t)).collect();
    let monotonicity_violations = grid
        .windows(2)
        .zip(log_snr.windows(2))
        .filter(|(_, w)| !(w[0] < w[1]))
        .map(|(t, _)| t[0])
        .collect();

    let h = opts.fd_step;
    let mut max_rel = 0.0f64;
    for &t in &grid[1..m - 1] {
        if t - h < 0.0 || t + h > 1.0 {
            continue;
        }
        let fd_a = (s.alpha(t + h) - s.alpha(t - h)) / (2.0 * h);
        let fd_s = (s.sigma(t + h) - s.sigma(t - h)) / (2.0 * h);
        for (exact, fd) in [(s.dalpha(t), fd_a), (s.dsigma(t), fd_s)] {
            let rel = (exact - fd).abs() / exact.abs().max(1.0);
            if rel.is_nan() {
                max_rel = f64::INFINITY;
            } else {
                max_rel = max_rel.max(rel);
            }
        }
    }

    SchedulerReport {
        name: s.name(),
        boundary_residuals,
        boundary_ok,
        monotonicity_violations,
        max_derivative_rel_error: max_rel,
        derivative_ok: max_rel <= opts.derivative_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtins() -> Vec<Scheduler> {
        vec![Scheduler::Ot, Scheduler::Cosine, Scheduler::default_vp()]
    }

    #[test]
    fn ot_examples() {
        let s = make_ot_scheduler();
        assert_eq!(s.alpha(0.0), 0.0);
        assert_eq!(s.sigma(0.25), 0.75);
        assert!((s.snr(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        let s = make_cosine_scheduler();
        assert!((s.alpha(1.0) - 1.0).abs() < 1e-15);
        assert!((s.snr(0.5) - 1.0).abs() < 1e-15);
        assert!((s.dalpha(0.0) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn vp_examples() {
        let s = make_vp_scheduler(20.0, 0.1).unwrap();
        assert_eq!(s.alpha(1.0), 1.0);
        assert_eq!(s.sigma(1.0), 0.0);
        let grid: Vec<f64> = (0..1001).map(|j| j as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(s.snr(w[0]) < s.snr(w[1]), "snr not increasing at {}", w[0]);
        }
    }

    #[test]
    fn vp_rejects_bad_rates() {
        assert!(make_vp_scheduler(0.1, 0.1).is_err());
        assert!(make_vp_scheduler(0.05, 0.1).is_err());
        assert!(make_vp_scheduler(20.0, 0.0).is_err());
    }

    #[test]
    fn snr_is_infinite_at_data_end_and_zero_at_noise_end() {
        for s in [Scheduler::Ot, Scheduler::Cosine] {
            assert_eq!(s.snr(0.0), 0.0);
            assert_eq!(s.snr(1.0), f64::INFINITY);
        }
    }

    #[test]
    fn snr_inverse_examples() {
        let ot = Scheduler::Ot;
        assert!((snr_inverse(&ot, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((snr_inverse(&Scheduler::Cosine, 1.0).unwrap() - 0.5).abs() < 1e-14);
        let y = ot.snr(0.3);
        assert!((snr_inverse(&ot, y).unwrap() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn snr_inverse_rejects_out_of_range() {
        assert!(snr_inverse(&Scheduler::Ot, 0.0).is_err());
        assert!(snr_inverse(&Scheduler::Ot, -1.0).is_err());
        assert!(snr_inverse(&Scheduler::Ot, f64::INFINITY).is_err());
        // VP snr at t = 0 is xi_1 / sqrt(1 - xi_1^2) > 0
        let vp = Scheduler::default_vp();
        assert!(snr_inverse(&vp, 0.5 * vp.snr(0.0)).is_err());
    }

    #[test]
    fn snr_inverse_roundtrip_all_builtins() {
        for s in builtins() {
            for j in 1..=99 {
                let t = j as f64 / 100.0;
                let y = s.snr(t);
                let back = snr_inverse(&s, y).unwrap();
                assert!((back - t).abs() <= 1e-10, "{s:?} t={t} back={back}");
                assert!((s.snr(back) - y).abs() <= 1e-12 * (1.0 + y));
            }
        }
    }

    #[test]
    fn builtin_schedulers_have_consistent_derivatives() {
        for s in builtins() {
            let r = validate_scheduler(&s);
            assert!(r.derivative_ok, "{:?}: {}", s, r.max_derivative_rel_error);
            assert!(r.monotonicity_violations.is_empty());
        }
    }

    #[test]
    fn ot_and_cosine_pass_validation() {
        assert!(validate_scheduler(&Scheduler::Ot).passed());
        assert!(validate_scheduler(&Scheduler::Cosine).passed());
    }

    #[test]
    fn vp_noise_end_boundary_residual_is_xi_one() {
        let r = validate_scheduler(&Scheduler::default_vp());
        let xi1 = (-0.25 * 19.9f64 - 0.05).exp();
        assert!((r.boundary_residuals[0] - xi1).abs() < 1e-15);
        assert_eq!(r.boundary_residuals[1], 0.0);
        assert_eq!(r.boundary_residuals[2], 0.0);
    }

    #[test]
    fn quadratic_alpha_scheduler_passes() {
        let s = FnScheduler::new("quad", |t| t * t, |t| 1.0 - t, |t| 2.0 * t, |_| -1.0);
        let r = validate_scheduler(&s);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn swapped_scheduler_fails_on_boundary() {
        let s = FnScheduler::new("swapped", |t| 1.0 - t, |t| t, |_| -1.0, |_| 1.0);
        let r = validate_scheduler(&s);
        assert!(!r.boundary_ok);
        assert_eq!(r.boundary_residuals[0], 1.0);
        assert!(!r.passed());
    }

    #[test]
    fn vp_sigma_dsigma_is_finite_at_data_end() {
        let vp = Scheduler::default_vp();
        assert!(vp.sigma_dsigma(1.0).is_finite());
        assert!((vp.sigma_dsigma(1.0) + vp.dalpha(1.0)).abs() < 1e-15);
    }

    #[test]
    fn dsnr_matches_finite_difference() {
        let h = 1e-6;
        for s in builtins() {
            for &t in &[0.1, 0.4, 0.8] {
                let fd = (s.snr(t + h) - s.snr(t - h)) / (2.0 * h);
                assert!((s.dsnr(t) - fd).abs() / fd.abs() < 1e-7);
            }
        }
    }
}
