use crate::error::Result;
use crate::fields::VelocityField;
use crate::solvers::{check_divergence, solve_fixed};
use crate::vector::l2_norm;

use super::{BaseKind, Node, SchemeGrids};

/// `ū(x) = (ṡ/s) x + ṫ s u_t(x/s)` at one node.
pub fn transformed_velocity<F: VelocityField + ?Sized>(node: &Node, f: &F, x: &[f64]) -> Result<Vec<f64>> {
    let inv = 1.0 / node.s;
    let xs: Vec<f64> = x.iter().map(|v| v * inv).collect();
    let u = f.eval(node.t, &xs)?;
    let a = node.ds * inv;
    let b = node.dt * node.s;
    Ok(x.iter().zip(&u).map(|(xi, ui)| a * xi + b * ui).collect())
}

pub fn transformed_field_at_node<F: VelocityField + ?Sized>(g: &SchemeGrids, k: usize, f: &F, x: &[f64]) -> Result<Vec<f64>> {
    transformed_velocity(&g.node(k), f, x)
}

/// One RK1-bespoke step of size `h` from node `a` to a node with scale `s_next`:
/// `x' = ((s + hṡ)/s') x + hṫ (s/s') u_t(x)`.
pub fn bespoke_rk1_update<F: VelocityField + ?Sized>(f: &F, h: f64, a: &Node, s_next: f64, x: &[f64]) -> Result<Vec<f64>> {
    let u = f.eval(a.t, x)?;
    let cx = (a.s + h * a.ds) / s_next;
    let cu = h * a.dt * a.s / s_next;
    Ok(x.iter().zip(&u).map(|(xi, ui)| cx * xi + cu * ui).collect())
}

/// One RK2-bespoke (midpoint) step with midpoint node `mid`.
pub fn bespoke_rk2_update<F: VelocityField + ?Sized>(
    f: &F,
    h: f64,
    a: &Node,
    mid: &Node,
    s_next: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let half = 0.5 * h;
    let u0 = f.eval(a.t, x)?;
    let cz = a.s + half * a.ds;
    let cu = half * a.s * a.dt;
    let z: Vec<f64> = x.iter().zip(&u0).map(|(xi, ui)| cz * xi + cu * ui).collect();
    let w: Vec<f64> = z.iter().map(|v| v / mid.s).collect();
    let u1 = f.eval(mid.t, &w)?;
    let rz = mid.ds / mid.s;
    let ru = mid.dt * mid.s;
    Ok((0..x.len())
        .map(|j| (a.s * x[j] + h * (rz * z[j] + ru * u1[j])) / s_next)
        .collect())
}

pub fn bespoke_rk1_step<F: VelocityField + ?Sized>(g: &SchemeGrids, i: usize, x: &[f64], f: &F) -> Result<Vec<f64>> {
    debug_assert_eq!(g.base_kind, BaseKind::Rk1);
    bespoke_rk1_update(f, g.h(), &g.node(i), g.s[i + 1], x)
}

pub fn bespoke_rk2_step<F: VelocityField + ?Sized>(g: &SchemeGrids, i: usize, x: &[f64], f: &F) -> Result<Vec<f64>> {
    debug_assert_eq!(g.base_kind, BaseKind::Rk2);
    let k = 2 * i;
    bespoke_rk2_update(f, g.h(), &g.node(k), &g.node(k + 1), g.s[k + 2], x)
}

/// Step `i -> i + 1` in the original coordinates.
pub fn bespoke_step<F: VelocityField + ?Sized>(g: &SchemeGrids, i: usize, x: &[f64], f: &F) -> Result<Vec<f64>> {
    match g.base_kind {
        BaseKind::Rk1 => bespoke_rk1_step(g, i, x, f),
        BaseKind::Rk2 => bespoke_rk2_step(g, i, x, f),
    }
}

/// All states `x_0, ..., x_n` of the bespoke solver started at `x0`.
pub fn bespoke_rollout<F: VelocityField + ?Sized>(g: &SchemeGrids, f: &F, x0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let x0_norm = l2_norm(x0);
    let mut states = Vec::with_capacity(g.n + 1);
    states.push(x0.to_vec());
    for i in 0..g.n {
        let next = bespoke_step(g, i, &states[i], f)?;
        check_divergence(&next, x0_norm, i)?;
        states.push(next);
    }
    Ok(states)
}

/// The transformed field `ū_r` on the scheme's `r` grid.
///
/// Only defined at grid slots; any `r` is snapped to the nearest slot.
pub struct TransformedField<'a, F: ?Sized> {
    grids: &'a SchemeGrids,
    field: &'a F,
}

impl<'a, F: VelocityField + ?Sized> TransformedField<'a, F> {
    pub fn new(grids: &'a SchemeGrids, field: &'a F) -> Self {
        Self { grids, field }
    }

    fn slot(&self, r: f64) -> usize {
        let m = self.grids.slots();
        ((r * m as f64).round().max(0.0) as usize).min(m)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for TransformedField<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval_into(&self, r: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let k = self.slot(r);
        // ṫ and ṡ are not stored at the last slot; no base step evaluates there.
        let node = if k < self.grids.slots() {
            self.grids.node(k)
        } else {
            Node { t: 1.0, dt: self.grids.dt[k - 1], s: self.grids.s[k], ds: self.grids.ds[k - 1] }
        };
        out.copy_from_slice(&transformed_velocity(&node, self.field, x)?);
        Ok(())
    }
}

/// Sample by running the base solver on `ū` over `r ∈ [0, 1]` from
/// `x̄_0 = s_0 x0`, then mapping back with `x_n = x̄_n / s_n`.
pub fn bespoke_sample<F: VelocityField + ?Sized>(g: &SchemeGrids, f: &F, x0: &[f64]) -> Result<Vec<f64>> {
    let field = TransformedField::new(g, f);
    let xbar0: Vec<f64> = x0.iter().map(|v| v * g.s[0]).collect();
    let sol = solve_fixed(&field, g.base_kind.step_kind(), g.n, &xbar0)?;
    let s_n = g.final_scale();
    Ok(sol.final_state().iter().map(|v| v / s_n).collect())
}
