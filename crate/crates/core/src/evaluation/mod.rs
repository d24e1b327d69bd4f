//! Metrics and checks: PSNR, empirical order of accuracy, scheduler
//! equivalence through scale-time maps, and RMSE/PSNR sweeps over NFE.

mod equivalence;
mod sweep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::scheme::{bespoke_rk1_update, bespoke_rk2_update, BaseKind, SmoothScaleTime};
use crate::solvers::{solve_adaptive_with, step, AdaptiveOptions, StepKind, Trajectory};
use crate::vector::rms_distance;

pub use equivalence::{scheduler_equivalence, EquivalenceOptions, EquivalenceReport, ScaleTimeMap};
pub use sweep::{sweep, EvalReport, SolverSpec, SweepRow};

/// Errors below this are treated as roundoff and left out of order fits.
pub const PRECISION_FLOOR: f64 = 1e-13;

/// `10 log10(peak^2 / MSE)` with the MSE taken over all samples and
/// coordinates. Identical batches give `+inf`.
pub fn psnr(reference: &[Vec<f64>], candidate: &[Vec<f64>], peak: f64) -> Result<f64> {
    if reference.len() != candidate.len() || reference.iter().zip(candidate).any(|(a, b)| a.len() != b.len()) {
        return Err(BespokeError::InvalidParameter("psnr needs batches of equal shape".into()));
    }
    if !(peak > 0.0) {
        return Err(BespokeError::InvalidParameter(format!("psnr peak must be positive, got {peak}")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in reference.iter().zip(candidate) {
        for (x, y) in a.iter().zip(b) {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    if count == 0 {
        return Err(BespokeError::InvalidParameter("psnr needs non-empty batches".into()));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Largest absolute coordinate of the reference batch.
pub fn default_peak(reference: &[Vec<f64>]) -> f64 {
    reference.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    line_fit(xs, ys).0
}

// (slope, rms residual) of the fit of ln y on ln x.
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let res = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (my + slope * (x - mx));
            r * r
        })
        .sum::<f64>();
    (slope, (res / n).sqrt())
}

/// One step of a solver under test: it starts on the reference path at
/// `(t0, x0)` and lands at `x1`, which should approximate `x(t1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStep {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub t1: f64,
    pub x1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    /// Mean of the per-anchor slopes.
    pub slope: f64,
    /// 95% normal half-width of the mean slope.
    pub half_width: f64,
    pub anchor_slopes: Vec<f64>,
    /// RMS residual of the per-anchor log-log fits, averaged.
    pub residual: f64,
    /// `(anchor, h)` pairs dropped at the precision floor.
    pub dropped: Vec<(usize, f64)>,
}

/// Fit the local error order of `step` over `h_grid` at each anchor
/// `0..anchors`. The reference for each step is a tight adaptive solve from
/// `(t0, x0)` to `t1`.
pub fn empirical_order<F, S>(f: &F, anchors: usize, h_grid: &[f64], reference_tol: f64, step_fn: S) -> Result<OrderFit>
where
    F: VelocityField + ?Sized,
    S: Fn(usize, f64) -> Result<LocalStep> + Sync,
{
    if h_grid.len() < 3 {
        return Err(BespokeError::InvalidParameter("order fits need at least 3 step sizes".into()));
    }
    let per_anchor: Vec<(Option<(f64, f64)>, Vec<(usize, f64)>)> = (0..anchors)
        .into_par_iter()
        .map(|a| {
            let mut hs = Vec::new();
            let mut errs = Vec::new();
            let mut dropped = Vec::new();
            for &h in h_grid {
                let ls = step_fn(a, h)?;
                let opts = AdaptiveOptions {
                    rtol: reference_tol,
                    atol: reference_tol,
                    t_start: ls.t0,
                    t_end: ls.t1,
                    h0: (ls.t1 - ls.t0) * 0.1,
                    ..AdaptiveOptions::default()
                };
                let reference = solve_adaptive_with(f, &ls.x0, &opts)?;
                let err = rms_distance(reference.final_state(), &ls.x1);
                if err < PRECISION_FLOOR {
                    log::warn!("anchor {a}: local error {err:e} at h = {h} is below the precision floor; dropped");
                    dropped.push((a, h));
                } else {
                    hs.push(h);
                    errs.push(err);
                }
            }
            let fit = (hs.len() >= 2).then(|| line_fit(&hs, &errs));
            Ok((fit, dropped))
        })
        .collect::<Result<_>>()?;
    let fits: Vec<(f64, f64)> = per_anchor.iter().filter_map(|(f, _)| *f).collect();
    if fits.is_empty() {
        return Err(BespokeError::InvalidParameter("every anchor hit the precision floor".into()));
    }
    let k = fits.len() as f64;
    let slope = fits.iter().map(|f| f.0).sum::<f64>() / k;
    let var = fits.iter().map(|f| (f.0 - slope).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    Ok(OrderFit {
        slope,
        half_width: 1.96 * (var / k).sqrt(),
        anchor_slopes: fits.iter().map(|f| f.0).collect(),
        residual: fits.iter().map(|f| f.1).sum::<f64>() / k,
        dropped: per_anchor.into_iter().flat_map(|(_, d)| d).collect(),
    })
}

/// Local order of a plain RK step at `anchor_times` on each reference path.
pub fn base_step_order<F: VelocityField + ?Sized>(
    f: &F,
    kind: StepKind,
    paths: &[Trajectory],
    anchor_times: &[f64],
    h_grid: &[f64],
) -> Result<OrderFit> {
    let na = anchor_times.len();
    empirical_order(f, paths.len() * na, h_grid, 1e-12, |a, h| {
        let t0 = anchor_times[a % na];
        let x0 = paths[a / na].interpolate(t0)?;
        let x1 = step(kind, f, t0, &x0, h)?.x_next;
        Ok(LocalStep { t0, x0, t1: t0 + h, x1 })
    })
}

/// Local order of a bespoke step built from a smooth scale-time member,
/// launched at `r` in `anchor_rs` from the reference path at `t_r`.
pub fn bespoke_step_order<F: VelocityField + ?Sized>(
    f: &F,
    family: &SmoothScaleTime,
    kind: BaseKind,
    paths: &[Trajectory],
    anchor_rs: &[f64],
    h_grid: &[f64],
) -> Result<OrderFit> {
    let na = anchor_rs.len();
    empirical_order(f, paths.len() * na, h_grid, 1e-12, |a, h| {
        let r = anchor_rs[a % na];
        let start = family.node(r);
        let end = family.node(r + h);
        let x0 = paths[a / na].interpolate(start.t)?;
        let x1 = match kind {
            BaseKind::Rk1 => bespoke_rk1_update(f, h, &start, end.s, &x0)?,
            BaseKind::Rk2 => bespoke_rk2_update(f, h, &start, &family.node(r + 0.5 * h), end.s, &x0)?,
        };
        Ok(LocalStep { t0: start.t, x0, t1: end.t, x1 })
    })
}

#[cfg(test)]
mod tests;
