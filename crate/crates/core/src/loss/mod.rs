//! The RMSE-bound training loss.
//!
//! For a reference path `x(t)` the local error of step `i` is
//! `d_i = ||x(t_i) - step(x(t_{i-1}))||`, and the global error of the
//! bespoke solver obeys `e_n <= sum_i M_i d_i` where `M_i` is the product of
//! the step Lipschitz constants after step `i`. The loss is the batch mean of
//! the right-hand side.

mod sensitivity;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::scheme::{bespoke_rk1_update, bespoke_rk2_update, bespoke_sample, BaseKind, Node, SchemeGrids};
use crate::solvers::{Interpolation, Trajectory};

pub use crate::vector::rms_norm;
pub use sensitivity::bespoke_loss_gradient;

/// Linearization of a reference path around a frozen time:
/// `x_aux(t) = x(τ) + u_τ(x(τ)) (t - τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxAnchor {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl AuxAnchor {
    pub fn capture<F: VelocityField + ?Sized>(
        traj: &Trajectory,
        f: &F,
        t_nominal: f64,
        mode: Interpolation,
    ) -> Result<Self> {
        let x = traj.interpolate_with(t_nominal, mode)?;
        let u = f.eval(t_nominal, &x)?;
        Ok(Self { t: t_nominal, x, u })
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let dt = t - self.t;
        self.x.iter().zip(&self.u).map(|(x, u)| x + u * dt).collect()
    }
}

pub fn aux_target<F: VelocityField + ?Sized>(traj: &Trajectory, f: &F, t_nominal: f64, t_query: f64) -> Result<Vec<f64>> {
    Ok(AuxAnchor::capture(traj, f, t_nominal, Interpolation::Dense)?.at(t_query))
}

/// Anchors at the integer nodes `t_0, ..., t_n` of `g`.
pub fn capture_anchors<F: VelocityField + ?Sized>(
    g: &SchemeGrids,
    f: &F,
    traj: &Trajectory,
    mode: Interpolation,
) -> Result<Vec<AuxAnchor>> {
    (0..=g.n).map(|i| AuxAnchor::capture(traj, f, g.time_at(i), mode)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Launch and compare against the frozen linearization.
    #[default]
    Aux,
    /// Use the dense interpolant directly.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub l_tau: f64,
    pub target: TargetMode,
    pub interpolation: Interpolation,
    /// Also roll out the solver from each `x0` to report `e_n`.
    pub global_error: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            l_tau: 1.0,
            target: TargetMode::Aux,
            interpolation: Interpolation::Dense,
            global_error: true,
        }
    }
}

/// Path value and its time derivative, as used by the loss at time `t`.
pub(crate) struct PathPoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

pub(crate) fn path_point(
    traj: &Trajectory,
    anchor: Option<&AuxAnchor>,
    t: f64,
    opts: &LossOptions,
) -> Result<PathPoint> {
    match (opts.target, anchor) {
        (TargetMode::Aux, Some(a)) => Ok(PathPoint { x: a.at(t), v: a.u.clone() }),
        (TargetMode::Aux, None) => Err(BespokeError::InvalidParameter("aux targets need anchors".into())),
        (TargetMode::Raw, _) => Ok(PathPoint {
            x: traj.interpolate_with(t, opts.interpolation)?,
            v: traj.interpolate_derivative(t, opts.interpolation)?,
        }),
    }
}

pub(crate) fn step_from<F: VelocityField + ?Sized>(g: &SchemeGrids, i: usize, f: &F, x: &[f64]) -> Result<Vec<f64>> {
    let h = g.h();
    match g.base_kind {
        BaseKind::Rk1 => bespoke_rk1_update(f, h, &g.node(i), g.s[i + 1], x),
        BaseKind::Rk2 => bespoke_rk2_update(f, h, &g.node(2 * i), &g.node(2 * i + 1), g.s[2 * i + 2], x),
    }
}

fn local_errors_with<F: VelocityField + ?Sized>(
    g: &SchemeGrids,
    f: &F,
    traj: &Trajectory,
    anchors: Option<&[AuxAnchor]>,
    opts: &LossOptions,
) -> Result<Vec<f64>> {
    (0..g.n)
        .map(|i| {
            let launch = path_point(traj, anchors.map(|a| &a[i]), g.time_at(i), opts)?;
            let target = path_point(traj, anchors.map(|a| &a[i + 1]), g.time_at(i + 1), opts)?;
            let y = step_from(g, i, f, &launch.x)?;
            Ok(crate::vector::rms_distance(&target.x, &y))
        })
        .collect()
}

/// `d_1, ..., d_n` for one reference path, with anchors taken at the
/// scheme's own node times.
pub fn local_errors<F: VelocityField + ?Sized>(g: &SchemeGrids, f: &F, traj: &Trajectory, opts: &LossOptions) -> Result<Vec<f64>> {
    let anchors = match opts.target {
        TargetMode::Aux => Some(capture_anchors(g, f, traj, opts.interpolation)?),
        TargetMode::Raw => None,
    };
    local_errors_with(g, f, traj, anchors.as_deref(), opts)
}

/// Lipschitz bound of the transformed field, `|ṡ|/s + ṫ L_τ`.
pub fn lipschitz_ubar(node: &Node, l_tau: f64) -> f64 {
    node.ds.abs() / node.s + node.dt * l_tau
}

/// Lipschitz constant of step `i` (`0 <= i < n`) in the original coordinates.
pub fn lipschitz_step(g: &SchemeGrids, i: usize, l_tau: f64) -> f64 {
    let h = g.h();
    match g.base_kind {
        BaseKind::Rk1 => g.s[i] / g.s[i + 1] * (1.0 + h * lipschitz_ubar(&g.node(i), l_tau)),
        BaseKind::Rk2 => {
            let k = 2 * i;
            let inner = 1.0 + 0.5 * h * lipschitz_ubar(&g.node(k), l_tau);
            g.s[k] / g.s[k + 2] * (1.0 + h * lipschitz_ubar(&g.node(k + 1), l_tau) * inner)
        }
    }
}

/// Given `L_0, ..., L_{n-1}`, returns `M_1, ..., M_n` with
/// `M_i = prod_{j=i}^{n} L_j` and `L_n = 1`. `L_0` does not enter.
pub fn suffix_products(l: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut m = vec![1.0; n];
    for i in (1..n).rev() {
        m[i - 1] = l[i] * m[i];
    }
    m
}

/// Batch-mean loss terms. `d[i-1]`, `m[i-1]` belong to step `i`; `l[i]` is `L_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    pub total: f64,
    /// Batch-mean global error of the rolled-out solver, if computed.
    pub e_n: Option<f64>,
    pub per_sample_total: Vec<f64>,
    pub per_sample_e_n: Vec<f64>,
}

impl LossBreakdown {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

pub fn bespoke_loss<F: VelocityField + ?Sized>(g: &SchemeGrids, f: &F, batch: &[Trajectory], l_tau: f64) -> Result<LossBreakdown> {
    bespoke_loss_with(g, f, batch, None, &LossOptions { l_tau, ..LossOptions::default() })
}

/// Loss with explicit options. `anchors`, when given, are the frozen
/// linearization points per path; otherwise they are captured from `g`.
pub fn bespoke_loss_with<F: VelocityField + ?Sized>(
    g: &SchemeGrids,
    f: &F,
    batch: &[Trajectory],
    anchors: Option<&[Vec<AuxAnchor>]>,
    opts: &LossOptions,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(BespokeError::InvalidParameter("loss needs a non-empty batch".into()));
    }
    let l: Vec<f64> = (0..g.n).map(|i| lipschitz_step(g, i, opts.l_tau)).collect();
    let m = suffix_products(&l);
    let per_sample: Vec<(Vec<f64>, Option<f64>)> = batch
        .par_iter()
        .enumerate()
        .map(|(b, traj)| {
            let d = match (opts.target, anchors) {
                (TargetMode::Aux, Some(a)) => local_errors_with(g, f, traj, Some(&a[b]), opts)?,
                _ => local_errors(g, f, traj, opts)?,
            };
            let e_n = if opts.global_error {
                let x_n = bespoke_sample(g, f, traj.initial_state())?;
                Some(crate::vector::rms_distance(traj.final_state(), &x_n))
            } else {
                None
            };
            Ok((d, e_n))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(l, m, &per_sample, batch.len()))
}

fn assemble(l: Vec<f64>, m: Vec<f64>, per_sample: &[(Vec<f64>, Option<f64>)], b: usize) -> LossBreakdown {
    let n = l.len();
    let bf = b as f64;
    let mut d = vec![0.0; n];
    for (ds, _) in per_sample {
        for i in 0..n {
            d[i] += ds[i];
        }
    }
    for v in &mut d {
        *v /= bf;
    }
    let per_sample_total: Vec<f64> = per_sample
        .iter()
        .map(|(ds, _)| ds.iter().zip(&m).map(|(di, mi)| mi * di).sum())
        .collect();
    let total = per_sample_total.iter().sum::<f64>() / bf;
    let per_sample_e_n: Vec<f64> = per_sample.iter().filter_map(|(_, e)| *e).collect();
    let e_n = (per_sample_e_n.len() == b).then(|| per_sample_e_n.iter().sum::<f64>() / bf);
    LossBreakdown { d, l, m, total, e_n, per_sample_total, per_sample_e_n }
}

/// Batch mean of `||x(1) - x_n||` for the bespoke sampler.
pub fn rmse_global<F: VelocityField + ?Sized>(
    g: &SchemeGrids,
    f: &F,
    x0_batch: &[Vec<f64>],
    endpoints: &[Vec<f64>],
) -> Result<f64> {
    if x0_batch.is_empty() || x0_batch.len() != endpoints.len() {
        return Err(BespokeError::InvalidParameter("x0 batch and endpoints must be non-empty and equal length".into()));
    }
    let errs: Vec<f64> = x0_batch
        .par_iter()
        .zip(endpoints)
        .map(|(x0, x1)| Ok(crate::vector::rms_distance(x1, &bespoke_sample(g, f, x0)?)))
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}
