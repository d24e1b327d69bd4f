//! Exact gradient of the loss by forward tangent propagation through each
//! step, followed by the chain rule through `materialize`.

use rayon::prelude::*;

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::scheme::{BaseKind, SchemeGrids, SchemeParams};
use crate::solvers::Trajectory;

use super::{
    assemble, capture_anchors, lipschitz_step, lipschitz_ubar, path_point, step_from, suffix_products, AuxAnchor,
    LossBreakdown, LossOptions, TargetMode,
};

/// Gradients with respect to the materialized grid values.
#[derive(Clone, Debug)]
struct GridGrad {
    t: Vec<f64>,
    dt: Vec<f64>,
    s: Vec<f64>,
    ds: Vec<f64>,
}

impl GridGrad {
    fn zeros(m: usize) -> Self {
        Self { t: vec![0.0; m + 1], dt: vec![0.0; m], s: vec![0.0; m + 1], ds: vec![0.0; m] }
    }

    fn add(&mut self, other: &GridGrad) {
        for (a, b) in [(&mut self.t, &other.t), (&mut self.dt, &other.dt), (&mut self.s, &other.s), (&mut self.ds, &other.ds)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn matvec(jac: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| jac[i * d + j] * v[j]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Perturbation of the local node values of one step.
#[derive(Clone, Copy, Default)]
struct Dir {
    t0: f64,
    dt0: f64,
    s0: f64,
    ds0: f64,
    tm: f64,
    dtm: f64,
    sm: f64,
    dsm: f64,
    s1: f64,
}

// Slot offsets and the grid array each direction lives in.
enum Var {
    T(usize),
    Dt(usize),
    S(usize),
    Ds(usize),
}

fn directions(kind: BaseKind) -> Vec<(Var, Dir)> {
    let one = |f: fn(&mut Dir)| {
        let mut d = Dir::default();
        f(&mut d);
        d
    };
    let mut v = vec![
        (Var::T(0), one(|d| d.t0 = 1.0)),
        (Var::Dt(0), one(|d| d.dt0 = 1.0)),
        (Var::S(0), one(|d| d.s0 = 1.0)),
        (Var::Ds(0), one(|d| d.ds0 = 1.0)),
    ];
    match kind {
        BaseKind::Rk1 => v.push((Var::S(1), one(|d| d.s1 = 1.0))),
        BaseKind::Rk2 => {
            v.push((Var::T(1), one(|d| d.tm = 1.0)));
            v.push((Var::Dt(1), one(|d| d.dtm = 1.0)));
            v.push((Var::S(1), one(|d| d.sm = 1.0)));
            v.push((Var::Ds(1), one(|d| d.dsm = 1.0)));
            v.push((Var::S(2), one(|d| d.s1 = 1.0)));
        }
    }
    v
}

/// Tangent map of one step, linear in the direction.
struct StepTangent {
    kind: BaseKind,
    h: f64,
    x: Vec<f64>,
    vx: Vec<f64>,
    y: Vec<f64>,
    a: crate::scheme::Node,
    mid: crate::scheme::Node,
    s1: f64,
    u0: Vec<f64>,
    j0: Vec<f64>,
    ut0: Vec<f64>,
    z: Vec<f64>,
    u1: Vec<f64>,
    j1: Vec<f64>,
    ut1: Vec<f64>,
}

impl StepTangent {
    fn new<F: VelocityField + ?Sized>(g: &SchemeGrids, i: usize, f: &F, x: Vec<f64>, vx: Vec<f64>) -> Result<Self> {
        let h = g.h();
        let k = g.slot_of_step(i);
        let a = g.node(k);
        let y = step_from(g, i, f, &x)?;
        let u0 = f.eval(a.t, &x)?;
        let j0 = f.jac_x(a.t, &x)?;
        let ut0 = f.dt(a.t, &x)?;
        let (mid, s1, z, u1, j1, ut1) = match g.base_kind {
            BaseKind::Rk1 => (a, g.s[k + 1], Vec::new(), Vec::new(), Vec::new(), Vec::new()),
            BaseKind::Rk2 => {
                let mid = g.node(k + 1);
                let cz = a.s + 0.5 * h * a.ds;
                let cu = 0.5 * h * a.s * a.dt;
                let z: Vec<f64> = x.iter().zip(&u0).map(|(xi, ui)| cz * xi + cu * ui).collect();
                let w: Vec<f64> = z.iter().map(|v| v / mid.s).collect();
                (mid, g.s[k + 2], z, f.eval(mid.t, &w)?, f.jac_x(mid.t, &w)?, f.dt(mid.t, &w)?)
            }
        };
        Ok(Self { kind: g.base_kind, h, x, vx, y, a, mid, s1, u0, j0, ut0, z, u1, j1, ut1 })
    }

    fn apply(&self, dir: &Dir) -> Vec<f64> {
        let (h, a, x) = (self.h, &self.a, &self.x);
        let dx: Vec<f64> = self.vx.iter().map(|v| v * dir.t0).collect();
        let mut du0 = matvec(&self.j0, &dx);
        for (v, ut) in du0.iter_mut().zip(&self.ut0) {
            *v += ut * dir.t0;
        }
        let dim = x.len();
        match self.kind {
            BaseKind::Rk1 => (0..dim)
                .map(|j| {
                    ((dir.s0 + h * dir.ds0) * x[j]
                        + (a.s + h * a.ds) * dx[j]
                        + h * (dir.dt0 * a.s + a.dt * dir.s0) * self.u0[j]
                        + h * a.dt * a.s * du0[j])
                        / self.s1
                        - self.y[j] * dir.s1 / self.s1
                })
                .collect(),
            BaseKind::Rk2 => {
                let half = 0.5 * h;
                let m = &self.mid;
                let cz = a.s + half * a.ds;
                let dz: Vec<f64> = (0..dim)
                    .map(|j| {
                        (dir.s0 + half * dir.ds0) * x[j]
                            + cz * dx[j]
                            + half * ((dir.s0 * a.dt + a.s * dir.dt0) * self.u0[j] + a.s * a.dt * du0[j])
                    })
                    .collect();
                let dw: Vec<f64> = (0..dim).map(|j| dz[j] / m.s - self.z[j] * dir.sm / (m.s * m.s)).collect();
                let mut du1 = matvec(&self.j1, &dw);
                for (v, ut) in du1.iter_mut().zip(&self.ut1) {
                    *v += ut * dir.tm;
                }
                let dcoef = dir.dsm / m.s - m.ds * dir.sm / (m.s * m.s);
                (0..dim)
                    .map(|j| {
                        let db = dcoef * self.z[j]
                            + (m.ds / m.s) * dz[j]
                            + (dir.dtm * m.s + m.dt * dir.sm) * self.u1[j]
                            + m.dt * m.s * du1[j];
                        (dir.s0 * x[j] + a.s * dx[j] + h * db) / self.s1 - self.y[j] * dir.s1 / self.s1
                    })
                    .collect()
            }
        }
    }
}

// Gradient of sum_i M_i d_i for one path with respect to the grids.
fn sample_gradient<F: VelocityField + ?Sized>(
    g: &SchemeGrids,
    f: &F,
    traj: &Trajectory,
    anchors: Option<&[AuxAnchor]>,
    opts: &LossOptions,
    m: &[f64],
) -> Result<(Vec<f64>, GridGrad)> {
    let mut grad = GridGrad::zeros(g.slots());
    let dirs = directions(g.base_kind);
    let dim = traj.dim() as f64;
    let mut d_all = Vec::with_capacity(g.n);
    for i in 0..g.n {
        let launch = path_point(traj, anchors.map(|a| &a[i]), g.time_at(i), opts)?;
        let target = path_point(traj, anchors.map(|a| &a[i + 1]), g.time_at(i + 1), opts)?;
        let tan = StepTangent::new(g, i, f, launch.x, launch.v)?;
        let e: Vec<f64> = target.x.iter().zip(&tan.y).map(|(a, b)| a - b).collect();
        let d = (dot(&e, &e) / dim).sqrt();
        d_all.push(d);
        if d == 0.0 {
            continue;
        }
        // d(d_i)/dv = e . (d target/dv - d y/dv) / (dim d_i)
        let w = m[i] / (dim * d);
        let k = g.slot_of_step(i);
        let next = g.slot_of_step(i + 1);
        grad.t[next] += w * dot(&e, &target.v);
        for (var, dir) in &dirs {
            let dy = tan.apply(dir);
            let gv = -w * dot(&e, &dy);
            match *var {
                Var::T(o) => grad.t[k + o] += gv,
                Var::Dt(o) => grad.dt[k + o] += gv,
                Var::S(o) => grad.s[k + o] += gv,
                Var::Ds(o) => grad.ds[k + o] += gv,
            }
        }
    }
    Ok((d_all, grad))
}

// Adds d(sum_i M_i dbar_i)/d(grids) through the Lipschitz constants.
fn lipschitz_gradient(g: &SchemeGrids, l: &[f64], m: &[f64], dbar: &[f64], l_tau: f64, grad: &mut GridGrad) {
    let n = g.n;
    let h = g.h();
    // dLoss/dL_j = sum_{i=1}^{j} M_i dbar_i / L_j, for j >= 1
    let mut prefix = 0.0;
    for j in 1..n {
        prefix += m[j - 1] * dbar[j - 1];
        let gl = prefix / l[j];
        let ubar_grad = |k: usize| {
            let nd = g.node(k);
            // (d/ds, d/dṡ, d/dṫ) of |ṡ|/s + ṫ L_τ
            (-nd.ds.abs() / (nd.s * nd.s), sign(nd.ds) / nd.s, l_tau)
        };
        match g.base_kind {
            BaseKind::Rk1 => {
                let (s0, s1) = (g.s[j], g.s[j + 1]);
                let lu = lipschitz_ubar(&g.node(j), l_tau);
                let (bs, bds, bdt) = ubar_grad(j);
                let r = s0 / s1;
                grad.s[j] += gl * ((1.0 + h * lu) / s1 + r * h * bs);
                grad.ds[j] += gl * r * h * bds;
                grad.dt[j] += gl * r * h * bdt;
                grad.s[j + 1] -= gl * l[j] / s1;
            }
            BaseKind::Rk2 => {
                let k = 2 * j;
                let (s0, s1) = (g.s[k], g.s[k + 2]);
                let la = lipschitz_ubar(&g.node(k + 1), l_tau);
                let lb = lipschitz_ubar(&g.node(k), l_tau);
                let q = 1.0 + h * la * (1.0 + 0.5 * h * lb);
                let r = s0 / s1;
                let cb = r * h * la * 0.5 * h;
                let ca = r * h * (1.0 + 0.5 * h * lb);
                let (bs, bds, bdt) = ubar_grad(k);
                let (as_, ads, adt) = ubar_grad(k + 1);
                grad.s[k] += gl * (q / s1 + cb * bs);
                grad.ds[k] += gl * cb * bds;
                grad.dt[k] += gl * cb * bdt;
                grad.s[k + 1] += gl * ca * as_;
                grad.ds[k + 1] += gl * ca * ads;
                grad.dt[k + 1] += gl * ca * adt;
                grad.s[k + 2] -= gl * l[j] / s1;
            }
        }
    }
}

// Chain rule through `materialize`.
fn to_theta(p: &SchemeParams, g: &SchemeGrids, grad: &GridGrad) -> Vec<f64> {
    let m = p.slots();
    let total: f64 = p.theta_t.iter().map(|v| v.abs()).sum();
    // dt_k/dθ_j = sign(θ_j) (1{j <= k} - t_k) / S for slots j = 1..m
    let weighted: f64 = grad.t.iter().zip(&g.t).map(|(gt, t)| gt * t).sum();
    let mut tail = vec![0.0; m + 2];
    for k in (0..=m).rev() {
        tail[k] = tail[k + 1] + grad.t[k];
    }
    let mut out = Vec::with_capacity(4 * m);
    for j in 1..=m {
        out.push(sign(p.theta_t[j - 1]) * (tail[j] - weighted) / total);
    }
    for k in 0..m {
        out.push(sign(p.theta_dt[k]) * grad.dt[k]);
    }
    for k in 1..=m {
        out.push(g.s[k] * grad.s[k]);
    }
    out.extend_from_slice(&grad.ds);
    out
}

/// Loss and its exact gradient with respect to the flat parameter vector
/// (see [`SchemeParams::to_vec`]). Anchors, when given, are held fixed.
pub fn bespoke_loss_gradient<F: VelocityField + ?Sized>(
    params: &SchemeParams,
    f: &F,
    batch: &[Trajectory],
    anchors: Option<&[Vec<AuxAnchor>]>,
    opts: &LossOptions,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if batch.is_empty() {
        return Err(BespokeError::InvalidParameter("loss needs a non-empty batch".into()));
    }
    let g = params.materialize()?;
    let l: Vec<f64> = (0..g.n).map(|i| lipschitz_step(&g, i, opts.l_tau)).collect();
    let m = suffix_products(&l);
    let per_sample: Vec<(Vec<f64>, GridGrad)> = batch
        .par_iter()
        .enumerate()
        .map(|(b, traj)| {
            let own;
            let a = match (opts.target, anchors) {
                (TargetMode::Raw, _) => None,
                (TargetMode::Aux, Some(a)) => Some(a[b].as_slice()),
                (TargetMode::Aux, None) => {
                    own = capture_anchors(&g, f, traj, opts.interpolation)?;
                    Some(own.as_slice())
                }
            };
            sample_gradient(&g, f, traj, a, opts, &m)
        })
        .collect::<Result<_>>()?;
    let bsz = batch.len() as f64;
    let mut grad = GridGrad::zeros(g.slots());
    for (_, gg) in &per_sample {
        grad.add(gg);
    }
    for v in grad.t.iter_mut().chain(&mut grad.dt).chain(&mut grad.s).chain(&mut grad.ds) {
        *v /= bsz;
    }
    let d_only: Vec<(Vec<f64>, Option<f64>)> = per_sample.into_iter().map(|(d, _)| (d, None)).collect();
    let breakdown = assemble(l.clone(), m.clone(), &d_only, batch.len());
    lipschitz_gradient(&g, &l, &m, &breakdown.d, opts.l_tau, &mut grad);
    let theta_grad = to_theta(params, &g, &grad);
    if let Some(k) = theta_grad.iter().position(|v| !v.is_finite()) {
        return Err(BespokeError::ProbeFailure { coordinate: k });
    }
    Ok((breakdown, theta_grad))
}
