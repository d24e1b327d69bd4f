//! The parametric scale-time solver family.
//!
//! A scheme is a learned change of coordinates `x̄(r) = s_r x(t_r)` sampled on
//! a node grid. RK1 schemes use integer nodes `0..=n`; RK2 schemes also carry
//! the half-integer midpoints, stored as slots `0..=2n`.

mod family;
mod io;
mod step;

use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::solvers::StepKind;

pub use family::SmoothScaleTime;
pub use io::{Scheme, SCHEME_VERSION};
pub use step::{
    bespoke_rk1_step, bespoke_rk1_update, bespoke_rk2_step, bespoke_rk2_update, bespoke_rollout, bespoke_sample,
    bespoke_step, transformed_field_at_node, transformed_velocity, TransformedField,
};

/// Smallest admissible gap between consecutive node times.
pub const MIN_NODE_GAP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Rk1,
    Rk2,
}

impl BaseKind {
    /// Grid slots per step: 1 for integer nodes only, 2 with midpoints.
    pub fn slots_per_step(self) -> usize {
        match self {
            BaseKind::Rk1 => 1,
            BaseKind::Rk2 => 2,
        }
    }

    pub fn step_kind(self) -> StepKind {
        match self {
            BaseKind::Rk1 => StepKind::Rk1,
            BaseKind::Rk2 => StepKind::Rk2,
        }
    }

    pub fn evals_per_step(self) -> usize {
        self.step_kind().evals_per_step()
    }

    pub fn name(self) -> &'static str {
        self.step_kind().name()
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rk1" => Ok(BaseKind::Rk1),
            "rk2" => Ok(BaseKind::Rk2),
            other => Err(BespokeError::InvalidParameter(format!("unknown base kind '{other}'"))),
        }
    }
}

/// Values of the scale-time map at one grid slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub t: f64,
    pub dt: f64,
    pub s: f64,
    pub ds: f64,
}

/// Free parameters of a scheme.
///
/// Each vector has one entry per grid slot except one: `theta_t` and
/// `theta_s` cover slots `1..=m`, `theta_dt` and `theta_ds` cover
/// `0..m`, where `m = n * slots_per_step`. Rescaling `theta_t` leaves the
/// grid unchanged, so there is one fewer degree of freedom than entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub base_kind: BaseKind,
    pub n: usize,
    pub theta_t: Vec<f64>,
    pub theta_dt: Vec<f64>,
    pub theta_s: Vec<f64>,
    pub theta_ds: Vec<f64>,
}

impl SchemeParams {
    /// Parameters whose grids are the identity transformation.
    pub fn identity(base_kind: BaseKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(BespokeError::InvalidParameter("a scheme needs n >= 1".into()));
        }
        let m = n * base_kind.slots_per_step();
        Ok(Self {
            base_kind,
            n,
            theta_t: vec![1.0; m],
            theta_dt: vec![1.0; m],
            theta_s: vec![0.0; m],
            theta_ds: vec![0.0; m],
        })
    }

    /// Parameters that materialize back to `grids` (up to rounding).
    pub fn from_grids(grids: &SchemeGrids) -> Self {
        Self {
            base_kind: grids.base_kind,
            n: grids.n,
            theta_t: grids.t.windows(2).map(|w| w[1] - w[0]).collect(),
            theta_dt: grids.dt.clone(),
            theta_s: grids.s[1..].iter().map(|s| s.ln()).collect(),
            theta_ds: grids.ds.clone(),
        }
    }

    pub fn slots(&self) -> usize {
        self.n * self.base_kind.slots_per_step()
    }

    /// Length of the flat parameter vector.
    pub fn len(&self) -> usize {
        4 * self.slots()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.len() - 1
    }

    /// Flat layout `[theta_t, theta_dt, theta_s, theta_ds]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.theta_t);
        v.extend_from_slice(&self.theta_dt);
        v.extend_from_slice(&self.theta_s);
        v.extend_from_slice(&self.theta_ds);
        v
    }

    pub fn from_vec(base_kind: BaseKind, n: usize, theta: &[f64]) -> Result<Self> {
        let m = n * base_kind.slots_per_step();
        if n == 0 || theta.len() != 4 * m {
            return Err(BespokeError::InvalidParameter(format!(
                "expected {} parameters for n = {n}, got {}",
                4 * m,
                theta.len()
            )));
        }
        Ok(Self {
            base_kind,
            n,
            theta_t: theta[..m].to_vec(),
            theta_dt: theta[m..2 * m].to_vec(),
            theta_s: theta[2 * m..3 * m].to_vec(),
            theta_ds: theta[3 * m..].to_vec(),
        })
    }

    fn check_shape(&self) -> Result<()> {
        let m = self.slots();
        if self.n == 0 || [&self.theta_t, &self.theta_dt, &self.theta_s, &self.theta_ds].iter().any(|v| v.len() != m) {
            return Err(BespokeError::InvalidParameter(format!(
                "each theta block must have {m} entries for {} with n = {}",
                self.base_kind.name(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn materialize(&self) -> Result<SchemeGrids> {
        materialize(self)
    }
}

/// Map free parameters to grids:
/// `t_k = sum_{j<=k} |θ^t_j| / sum_j |θ^t_j|`, `ṫ_k = |θ^ṫ_k|`,
/// `s_k = exp θ^s_k` with `s_0 = 1`, and `ṡ_k = θ^ṡ_k`.
pub fn materialize(p: &SchemeParams) -> Result<SchemeGrids> {
    p.check_shape()?;
    let m = p.slots();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for v in &p.theta_t {
        acc += v.abs();
        cum.push(acc);
    }
    if !(acc > 0.0 && acc.is_finite()) {
        return Err(BespokeError::DegenerateGrid(format!("time generators sum to {acc}")));
    }
    let mut t: Vec<f64> = cum.iter().map(|c| c / acc).collect();
    t[m] = 1.0;
    let dt = p.theta_dt.iter().map(|v| v.abs()).collect();
    let mut s = Vec::with_capacity(m + 1);
    s.push(1.0);
    s.extend(p.theta_s.iter().map(|v| v.exp()));
    SchemeGrids::new(p.base_kind, p.n, t, dt, s, p.theta_ds.clone())
}

/// Materialized node values of a scheme.
///
/// `t` and `s` have one entry per slot `0..=m`; `dt` and `ds` are only
/// needed where a step starts or evaluates its midpoint, slots `0..m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeGrids {
    pub base_kind: BaseKind,
    pub n: usize,
    pub t: Vec<f64>,
    pub dt: Vec<f64>,
    pub s: Vec<f64>,
    pub ds: Vec<f64>,
}

impl SchemeGrids {
    /// Validate raw grids.
    pub fn new(base_kind: BaseKind, n: usize, t: Vec<f64>, dt: Vec<f64>, s: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        let m = n * base_kind.slots_per_step();
        if n == 0 || t.len() != m + 1 || s.len() != m + 1 || dt.len() != m || ds.len() != m {
            return Err(BespokeError::InvalidParameter(format!(
                "grid lengths do not match {} with n = {n}",
                base_kind.name()
            )));
        }
        if t[0] != 0.0 || t[m] != 1.0 {
            return Err(BespokeError::DegenerateGrid(format!("time grid must span [0, 1], got [{}, {}]", t[0], t[m])));
        }
        if let Some(k) = t.windows(2).position(|w| !(w[1] - w[0] >= MIN_NODE_GAP)) {
            return Err(BespokeError::DegenerateGrid(format!(
                "node gap {:e} between slots {k} and {} is below {MIN_NODE_GAP:e}",
                t[k + 1] - t[k],
                k + 1
            )));
        }
        if let Some(k) = dt.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BespokeError::DegenerateGrid(format!("time derivative {} at slot {k} is not positive", dt[k])));
        }
        if let Some(k) = s.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BespokeError::DegenerateGrid(format!("scale {} at slot {k} is not positive", s[k])));
        }
        if s[0] != 1.0 {
            return Err(BespokeError::DegenerateGrid(format!("initial scale must be 1, got {}", s[0])));
        }
        if let Some(k) = ds.iter().position(|v| !v.is_finite()) {
            return Err(BespokeError::DegenerateGrid(format!("scale derivative at slot {k} is not finite")));
        }
        Ok(Self { base_kind, n, t, dt, s, ds })
    }

    pub fn identity(base_kind: BaseKind, n: usize) -> Result<Self> {
        SchemeParams::identity(base_kind, n)?.materialize()
    }

    /// Step size in `r`, `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn slots(&self) -> usize {
        self.t.len() - 1
    }

    /// Slot of integer node `i`.
    pub fn slot_of_step(&self, i: usize) -> usize {
        i * self.base_kind.slots_per_step()
    }

    /// `r` coordinate of slot `k`.
    pub fn r(&self, k: usize) -> f64 {
        k as f64 / self.slots() as f64
    }

    pub fn node(&self, k: usize) -> Node {
        Node {
            t: self.t[k],
            dt: self.dt[k],
            s: self.s[k],
            ds: self.ds[k],
        }
    }

    /// Time at integer node `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t[self.slot_of_step(i)]
    }

    pub fn scale_at(&self, i: usize) -> f64 {
        self.s[self.slot_of_step(i)]
    }

    pub fn final_scale(&self) -> f64 {
        *self.s.last().expect("non-empty grid")
    }

    pub fn nfe(&self) -> usize {
        self.n * self.base_kind.evals_per_step()
    }
}
