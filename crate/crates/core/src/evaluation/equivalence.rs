use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::{GaussianMixture, GmmField, VelocityField};
use crate::scheme::{transformed_velocity, Node};
use crate::schedulers::{snr_inverse, Schedule, Scheduler};
use crate::solvers::{solve_adaptive_with, AdaptiveOptions};
use crate::vector::{rms_distance, rms_norm};

/// The scale-time map taking paths of scheduler `a` to paths of `b`:
/// `x_b(r) = s_r x_a(t_r)` with `t_r = snr_a⁻¹(snr_b(r))` and
/// `s_r = σ_b(r) / σ_a(t_r)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleTimeMap {
    pub a: Scheduler,
    pub b: Scheduler,
}

impl ScaleTimeMap {
    pub fn new(a: Scheduler, b: Scheduler) -> Self {
        Self { a, b }
    }

    fn identical(&self) -> bool {
        self.a == self.b
    }

    /// Smallest `r` at which `t_r` exists.
    pub fn r_min(&self) -> Result<f64> {
        if self.identical() {
            return Ok(0.0);
        }
        let floor = self.a.snr(0.0);
        if self.b.snr(0.0) >= floor {
            Ok(0.0)
        } else {
            snr_inverse(&self.b, floor)
        }
    }

    /// `(t_r, ṫ_r, s_r, ṡ_r)`.
    pub fn at(&self, r: f64) -> Result<Node> {
        if self.identical() {
            return Ok(Node { t: r, dt: 1.0, s: 1.0, ds: 0.0 });
        }
        let (a, b) = (&self.a, &self.b);
        let y = b.snr(r);
        let floor = a.snr(0.0);
        // At the lower end of the map's range `t_r = 0`, up to roundoff in snr.
        let t = if y <= floor && floor - y <= 1e-12 * (1.0 + floor) { 0.0 } else { snr_inverse(a, y)? };
        let dt = b.dlog_snr(r) / a.dlog_snr(t);
        let sa = a.sigma(t);
        let s = b.sigma(r) / sa;
        let ds = (b.dsigma(r) - s * a.dsigma(t) * dt) / sa;
        Ok(Node { t, dt, s, ds })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceOptions {
    pub rtol: f64,
    pub atol: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub r_points: usize,
    pub field_points: usize,
    pub seed: u64,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            r_lo: 0.02,
            r_hi: 0.98,
            r_points: 97,
            field_points: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub scheduler_a: String,
    pub scheduler_b: String,
    pub r_lo: f64,
    pub r_hi: f64,
    /// Whether the requested lower end had to be raised to where the map exists.
    pub clipped: bool,
    pub r_grid: Vec<f64>,
    /// Max over the batch of `||s_r x_a(t_r) - x_b(r)||` at each `r`.
    pub path_residuals: Vec<f64>,
    pub max_path_residual: f64,
    /// Max relative mismatch between the transformed field of `a` and the field of `b`.
    pub max_field_rel_error: f64,
    /// Path residual at `r_hi`.
    pub endpoint_residual: f64,
}

/// Check that `b`'s Gaussian path is a scale-time transformation of `a`'s
/// for the same data `q`, pointwise for the fields and along solved paths.
///
/// When `snr_a(0) != snr_b(0)` the paths start where the map says they
/// meet: the scheduler with the larger `snr(0)` starts at its time zero from
/// `x0`, the other at the matching time with the mapped state.
pub fn scheduler_equivalence(
    a: Scheduler,
    b: Scheduler,
    q: &GaussianMixture,
    x0_batch: &[Vec<f64>],
    opts: &EquivalenceOptions,
) -> Result<EquivalenceReport> {
    let map = ScaleTimeMap::new(a, b);
    let fa = GmmField::new(a.shared(), q.clone());
    let fb = GmmField::new(b.shared(), q.clone());

    let r_start = map.r_min()?;
    let clipped = r_start >= opts.r_lo;
    let r_lo = if clipped {
        let lo = r_start + 1e-3;
        log::warn!("{} vs {}: r range clipped to start at {lo}", a.name(), b.name());
        lo
    } else {
        opts.r_lo
    };
    let r_hi = opts.r_hi;
    let m = opts.r_points.max(2);
    let r_grid: Vec<f64> = (0..m).map(|j| r_lo + (r_hi - r_lo) * j as f64 / (m - 1) as f64).collect();
    let nodes: Vec<Node> = r_grid.iter().map(|&r| map.at(r)).collect::<Result<_>>()?;

    let start = map.at(r_start)?;
    let residuals: Vec<Vec<f64>> = x0_batch
        .par_iter()
        .map(|x0| {
            // (t_start, state) for each path
            let (ta0, xa0, rb0, xb0) = if r_start == 0.0 {
                (start.t, x0.iter().map(|v| v / start.s).collect::<Vec<_>>(), 0.0, x0.clone())
            } else {
                (0.0, x0.clone(), r_start, x0.iter().map(|v| v * start.s).collect())
            };
            let solve = |f: &GmmField, t0: f64, y0: &[f64]| {
                solve_adaptive_with(
                    f,
                    y0,
                    &AdaptiveOptions { rtol: opts.rtol, atol: opts.atol, t_start: t0, t_end: 1.0, ..AdaptiveOptions::default() },
                )
            };
            let path_a = solve(&fa, ta0, &xa0)?;
            let path_b = solve(&fb, rb0, &xb0)?;
            r_grid
                .iter()
                .zip(&nodes)
                .map(|(&r, nd)| {
                    let xa: Vec<f64> = path_a.interpolate(nd.t)?.iter().map(|v| v * nd.s).collect();
                    Ok(rms_distance(&xa, &path_b.interpolate(r)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let path_residuals: Vec<f64> = (0..m).map(|j| residuals.iter().map(|r| r[j]).fold(0.0, f64::max)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = q.dim();
    let mut max_field_rel_error = 0.0f64;
    for _ in 0..opts.field_points {
        let r = rng.random_range(r_lo..=r_hi);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let nd = map.at(r)?;
        let ubar = transformed_velocity(&nd, &fa, &x)?;
        let ub = fb.eval(r, &x)?;
        max_field_rel_error = max_field_rel_error.max(rms_distance(&ubar, &ub) / rms_norm(&ub).max(1.0));
    }

    Ok(EquivalenceReport {
        scheduler_a: a.name(),
        scheduler_b: b.name(),
        r_lo,
        r_hi,
        clipped,
        max_path_residual: path_residuals.iter().copied().fold(0.0, f64::max),
        endpoint_residual: *path_residuals.last().expect("r grid is non-empty"),
        r_grid,
        path_residuals,
        max_field_rel_error,
    })
}
