//! Analytic velocity fields `u_t(x)`.
//!
//! The Gaussian-mixture marginal field stands in for a pre-trained flow
//! model: for data `q = sum_k w_k N(mu_k, eta_k^2 I)` and a scheduler
//! `(alpha, sigma)` the ideal field has a closed form.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::schedulers::{Schedule, Scheduler};
use crate::vector::all_finite;

/// A time-dependent vector field on `R^d`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Row-major `d x d` Jacobian `du/dx`. Central differences unless overridden.
    fn jac_x(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        fd_jacobian(self, t, x)
    }

    /// `du/dt`. Fourth-order differences restricted to `[0, 1]` unless overridden.
    fn dt(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        fd_time_derivative(self, t, x)
    }

    /// Known bound on `sup ||du/dx||`, if any.
    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_into(t, x, out)
    }
    fn jac_x(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).jac_x(t, x)
    }
    fn dt(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).dt(t, x)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

impl<F: VelocityField + ?Sized> VelocityField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_into(t, x, out)
    }
    fn jac_x(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).jac_x(t, x)
    }
    fn dt(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).dt(t, x)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

pub fn fd_jacobian<F: VelocityField + ?Sized>(f: &F, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = f.dim();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let mut up = vec![0.0; d];
    let mut um = vec![0.0; d];
    for j in 0..d {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        f.eval_into(t, &xp, &mut up)?;
        xp[j] = x[j] - h;
        f.eval_into(t, &xp, &mut um)?;
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (up[i] - um[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub fn fd_time_derivative<F: VelocityField + ?Sized>(f: &F, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    const H: f64 = 1e-3;
    let d = f.dim();
    // (offsets in units of H, weights); divide by 12 H
    let (offsets, weights): ([f64; 5], [f64; 5]) = if t - 2.0 * H >= 0.0 && t + 2.0 * H <= 1.0 {
        ([-2.0, -1.0, 1.0, 2.0, 0.0], [1.0, -8.0, 8.0, -1.0, 0.0])
    } else if t - 2.0 * H < 0.0 {
        ([0.0, 1.0, 2.0, 3.0, 4.0], [-25.0, 48.0, -36.0, 16.0, -3.0])
    } else {
        ([0.0, -1.0, -2.0, -3.0, -4.0], [25.0, -48.0, 36.0, -16.0, 3.0])
    };
    let mut acc = vec![0.0; d];
    let mut u = vec![0.0; d];
    for (o, w) in offsets.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        f.eval_into(t + o * H, x, &mut u)?;
        for (a, ui) in acc.iter_mut().zip(&u) {
            *a += w * ui;
        }
    }
    for a in &mut acc {
        *a /= 12.0 * H;
    }
    Ok(acc)
}

/// `u == 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    pub dim: usize,
}

impl VelocityField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn jac_x(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.dim * self.dim])
    }
    fn dt(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.dim])
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `u_t(x) = rate * x`.
#[derive(Clone, Copy, Debug)]
pub struct LinearField {
    pub dim: usize,
    pub rate: f64,
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.rate * xi;
        }
        Ok(())
    }
    fn jac_x(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut j = vec![0.0; d * d];
        for i in 0..d {
            j[i * d + i] = self.rate;
        }
        Ok(j)
    }
    fn dt(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.dim])
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(self.rate.abs())
    }
}

type FieldFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A field backed by a closure; derivatives come from finite differences.
pub struct FnField {
    dim: usize,
    f: FieldFn,
}

impl FnField {
    pub fn new(dim: usize, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, f: Box::new(f) }
    }
}

impl VelocityField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, x, out);
        if !all_finite(out) {
            return Err(BespokeError::SingularTime { t });
        }
        Ok(())
    }
}

/// The conditional field `u_t(x | x1) = (sigma'/sigma) x + (alpha' - sigma' alpha / sigma) x1`.
#[derive(Clone, Debug)]
pub struct ConditionalField {
    scheduler: Arc<dyn Schedule>,
    x1: Vec<f64>,
}

pub fn conditional_field(scheduler: Arc<dyn Schedule>, x1: Vec<f64>) -> ConditionalField {
    ConditionalField { scheduler, x1 }
}

impl VelocityField for ConditionalField {
    fn dim(&self) -> usize {
        self.x1.len()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = &self.scheduler;
        let sigma = s.sigma(t);
        if !(sigma > 0.0) {
            return Err(BespokeError::SingularTime { t });
        }
        let ds = s.dsigma(t);
        let a_coef = ds / sigma;
        let b_coef = s.dalpha(t) - ds * s.alpha(t) / sigma;
        for ((o, xi), x1i) in out.iter_mut().zip(x).zip(&self.x1) {
            *o = a_coef * xi + b_coef * x1i;
        }
        if !all_finite(out) {
            return Err(BespokeError::SingularTime { t });
        }
        Ok(())
    }

    fn jac_x(&self, t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        let sigma = self.scheduler.sigma(t);
        if !(sigma > 0.0) {
            return Err(BespokeError::SingularTime { t });
        }
        let d = self.dim();
        let c = self.scheduler.dsigma(t) / sigma;
        let mut j = vec![0.0; d * d];
        for i in 0..d {
            j[i * d + i] = c;
        }
        Ok(j)
    }
}

/// Isotropic Gaussian mixture `sum_k w_k N(mu_k, eta_k^2 I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(BespokeError::InvalidParameter(format!(
                "mixture needs matching non-empty weights/means/variances, got {}/{}/{}",
                k,
                means.len(),
                variances.len()
            )));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d || !all_finite(m)) {
            return Err(BespokeError::InvalidParameter(
                "mixture means must share a positive dimension and be finite".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(BespokeError::InvalidParameter("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BespokeError::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(BespokeError::InvalidParameter("mixture variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Equal-weight components with means evenly spaced on a circle in the
    /// first two coordinates.
    pub fn circle(dim: usize, components: usize, radius: f64, variance: f64) -> Result<Self> {
        if dim < 2 || components == 0 {
            return Err(BespokeError::InvalidParameter(
                "circle mixture needs dim >= 2 and at least one component".into(),
            ));
        }
        let means = (0..components)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / components as f64;
                let mut m = vec![0.0; dim];
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
                m
            })
            .collect();
        Self::new(
            vec![1.0 / components as f64; components],
            means,
            vec![variance; components],
        )
    }

    /// Equal-weight components with means drawn uniformly from `[-spread, spread]^d`.
    pub fn random(dim: usize, components: usize, spread: f64, variance: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..components)
            .map(|_| (0..dim).map(|_| rng.random_range(-spread..=spread)).collect())
            .collect();
        Self::new(
            vec![1.0 / components.max(1) as f64; components],
            means,
            vec![variance; components],
        )
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![vec![0.0; dim]],
            variances: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let logs: Vec<f64> = (0..self.components())
            .map(|k| {
                let v = self.variances[k];
                let sq: f64 = x.iter().zip(&self.means[k]).map(|(a, b)| (a - b) * (a - b)).sum();
                self.weights[k].ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * sq / v
            })
            .collect();
        log_sum_exp(&logs)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// The marginal field generated by a Gaussian path over a Gaussian-mixture
/// target.
///
/// Per component `k`, with `v_k = sigma^2 + alpha^2 eta_k^2`, the posterior
/// contribution is affine in `x`:
/// `g_k(x) = alpha' mu_k + c_k (x - alpha mu_k)`,
/// `c_k = (alpha' alpha eta_k^2 + sigma sigma') / v_k`,
/// and `u = sum_k gamma_k g_k` with responsibilities `gamma_k` from
/// `N(x; alpha mu_k, v_k I)`. This form has no `1/sigma`, so it stays finite
/// at `t = 1`.
#[derive(Clone)]
pub struct GmmField {
    scheduler: Arc<dyn Schedule>,
    mixture: GaussianMixture,
}

impl fmt::Debug for GmmField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GmmField")
            .field("scheduler", &self.scheduler.name())
            .field("mixture", &self.mixture)
            .finish()
    }
}

pub fn gmm_marginal_field(scheduler: Arc<dyn Schedule>, mixture: GaussianMixture) -> GmmField {
    GmmField { scheduler, mixture }
}

struct ComponentTerms {
    gamma: Vec<f64>,
    c: Vec<f64>,
    // g_k, row per component
    g: Vec<f64>,
    // q_k = -(x - alpha mu_k) / v_k
    q: Vec<f64>,
}

impl GmmField {
    pub fn new(scheduler: Arc<dyn Schedule>, mixture: GaussianMixture) -> Self {
        gmm_marginal_field(scheduler, mixture)
    }

    /// Single standard-normal target under the OT scheduler; here
    /// `u_t(x) = x (2t - 1) / (t^2 + (1 - t)^2)`.
    pub fn affine_standard_normal(dim: usize) -> Self {
        Self::new(Scheduler::Ot.shared(), GaussianMixture::standard_normal(dim))
    }

    /// Five equal-weight components of variance 0.09 on a circle of radius 3
    /// in the plane, under the OT scheduler.
    pub fn testbed() -> Self {
        Self::new(
            Scheduler::Ot.shared(),
            GaussianMixture::circle(2, 5, 3.0, 0.09).expect("valid testbed mixture"),
        )
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn scheduler(&self) -> &Arc<dyn Schedule> {
        &self.scheduler
    }

    fn is_affine_standard_normal(&self) -> bool {
        self.mixture.components() == 1
            && self.mixture.variances[0] == 1.0
            && self.mixture.means[0].iter().all(|m| *m == 0.0)
            && self.scheduler.name() == "ot"
            && self.scheduler.alpha(0.5) == 0.5
            && self.scheduler.sigma(0.25) == 0.75
    }

    fn terms(&self, t: f64, x: &[f64]) -> Result<ComponentTerms> {
        let s = &self.scheduler;
        let (a, b, da, sds) = (s.alpha(t), s.sigma(t), s.dalpha(t), s.sigma_dsigma(t));
        let d = x.len();
        let kk = self.mixture.components();
        let mut logits = Vec::with_capacity(kk);
        let mut c = Vec::with_capacity(kk);
        let mut g = vec![0.0; kk * d];
        let mut q = vec![0.0; kk * d];
        for k in 0..kk {
            let eta2 = self.mixture.variances[k];
            let v = b * b + a * a * eta2;
            if !(v > 0.0) || !v.is_finite() {
                return Err(BespokeError::SingularTime { t });
            }
            let mu = &self.mixture.means[k];
            let ck = (da * a * eta2 + sds) / v;
            let mut sq = 0.0;
            for j in 0..d {
                let diff = x[j] - a * mu[j];
                sq += diff * diff;
                g[k * d + j] = da * mu[j] + ck * diff;
                q[k * d + j] = -diff / v;
            }
            logits.push(self.mixture.weights[k].ln() - 0.5 * d as f64 * v.ln() - 0.5 * sq / v);
            c.push(ck);
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut gamma: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = gamma.iter().sum();
        for g in &mut gamma {
            *g /= total;
        }
        if !all_finite(&gamma) || !all_finite(&g) {
            return Err(BespokeError::SingularTime { t });
        }
        Ok(ComponentTerms { gamma, c, g, q })
    }

    /// Posterior component probabilities `p(k | x, t)`.
    pub fn responsibilities(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.terms(t, x)?.gamma)
    }
}

impl VelocityField for GmmField {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let terms = self.terms(t, x)?;
        let d = x.len();
        out.fill(0.0);
        for (k, gk) in terms.gamma.iter().enumerate() {
            for j in 0..d {
                out[j] += gk * terms.g[k * d + j];
            }
        }
        Ok(())
    }

    fn jac_x(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        // J = (sum_k gamma_k c_k) I + sum_k gamma_k (g_k - u)(q_k - q_bar)^T
        let terms = self.terms(t, x)?;
        let d = x.len();
        let mut u = vec![0.0; d];
        let mut q_bar = vec![0.0; d];
        let mut c_bar = 0.0;
        for (k, gk) in terms.gamma.iter().enumerate() {
            c_bar += gk * terms.c[k];
            for j in 0..d {
                u[j] += gk * terms.g[k * d + j];
                q_bar[j] += gk * terms.q[k * d + j];
            }
        }
        let mut jac = vec![0.0; d * d];
        for i in 0..d {
            jac[i * d + i] = c_bar;
        }
        for (k, gk) in terms.gamma.iter().enumerate() {
            for i in 0..d {
                let gi = gk * (terms.g[k * d + i] - u[i]);
                for j in 0..d {
                    jac[i * d + j] += gi * (terms.q[k * d + j] - q_bar[j]);
                }
            }
        }
        Ok(jac)
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        self.is_affine_standard_normal().then_some(1.0)
    }
}

/// Exact trajectory `x(t) = x0 sqrt(t^2 + (1 - t)^2)` of the affine
/// standard-normal/OT field.
pub fn affine_oracle_solution(field: &GmmField, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    if !field.is_affine_standard_normal() {
        return Err(BespokeError::Unsupported(
            "closed-form trajectory needs a single standard-normal component under OT".into(),
        ));
    }
    let scale = (t * t + (1.0 - t) * (1.0 - t)).sqrt();
    Ok(x0.iter().map(|v| v * scale).collect())
}

/// Spectral norm of a row-major `d x d` matrix.
pub fn spectral_norm(jac: &[f64], d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(d, d, jac);
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Max of `||du/dx||_2` over a uniform `t` grid of `sample_count` points
/// spanning `t_range` (inclusive), one seeded uniform `x` in
/// `[-x_box, x_box]^d` per time.
pub fn lipschitz_estimate<F: VelocityField + ?Sized>(
    f: &F,
    t_range: (f64, f64),
    sample_count: usize,
    x_box: f64,
    seed: u64,
) -> Result<f64> {
    let d = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sample_count.max(2);
    let mut best = 0.0f64;
    for j in 0..m {
        let t = t_range.0 + (t_range.1 - t_range.0) * j as f64 / (m - 1) as f64;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-x_box..=x_box)).collect();
        let jac = f.jac_x(t, &x)?;
        best = best.max(spectral_norm(&jac, d));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::Scheduler;

    fn testbed() -> GmmField {
        GmmField::new(
            Scheduler::Ot.shared(),
            GaussianMixture::circle(2, 5, 3.0, 0.09).unwrap(),
        )
    }

    #[test]
    fn conditional_field_ot_at_zero_is_difference() {
        let f = conditional_field(Scheduler::Ot.shared(), vec![1.5, -2.0]);
        let u = f.eval(0.0, &[0.25, 0.5]).unwrap();
        assert_eq!(u, vec![1.25, -2.5]);
    }

    #[test]
    fn conditional_field_ot_matches_simplified_form() {
        let x1 = [0.3, -1.2, 2.0];
        let f = conditional_field(Scheduler::Ot.shared(), x1.to_vec());
        for &t in &[0.1, 0.45, 0.9] {
            let x = [1.0, 0.5, -0.75];
            let u = f.eval(t, &x).unwrap();
            for j in 0..3 {
                let expected = (x1[j] - x[j]) / (1.0 - t);
                assert!((u[j] - expected).abs() < 1e-14 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn conditional_field_cosine_with_zero_target() {
        let f = conditional_field(Scheduler::Cosine.shared(), vec![0.0, 0.0]);
        let t = 0.37;
        let x = [0.8, -1.1];
        let u = f.eval(t, &x).unwrap();
        let k = -std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).tan();
        for j in 0..2 {
            assert!((u[j] - k * x[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn conditional_field_is_singular_at_data_end() {
        let f = conditional_field(Scheduler::Ot.shared(), vec![1.0]);
        assert!(matches!(f.eval(1.0, &[0.0]), Err(BespokeError::SingularTime { .. })));
    }

    #[test]
    fn single_standard_normal_field_vanishes_at_half() {
        let f = GmmField::affine_standard_normal(2);
        let u = f.eval(0.5, &[3.0, -7.0]).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn symmetric_pair_is_zero_at_origin() {
        let q = GaussianMixture::new(vec![0.5, 0.5], vec![vec![2.0, 1.0], vec![-2.0, -1.0]], vec![0.2, 0.2])
            .unwrap();
        for s in [Scheduler::Ot, Scheduler::Cosine, Scheduler::default_vp()] {
            let f = GmmField::new(s.shared(), q.clone());
            for &t in &[0.0, 0.3, 0.8, 1.0] {
                let u = f.eval(t, &[0.0, 0.0]).unwrap();
                assert!(u.iter().all(|v| v.abs() < 1e-14), "{s:?} t={t} {u:?}");
            }
        }
    }

    #[test]
    fn responsibilities_are_normalized() {
        let f = testbed();
        for &t in &[0.0, 0.2, 0.6, 0.99, 1.0] {
            for x in [[0.0, 0.0], [3.0, 0.1], [-50.0, 40.0]] {
                let g = f.responsibilities(t, &x).unwrap();
                assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_component_reduces_to_affine_form() {
        let f = GmmField::affine_standard_normal(2);
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let a = (2.0 * t - 1.0) / (t * t + (1.0 - t) * (1.0 - t));
            for x in [[1.0, -2.0], [0.3, 0.7], [-4.0, 5.5]] {
                let u = f.eval(t, &x).unwrap();
                for j in 0..2 {
                    assert!((u[j] - a * x[j]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gmm_field_finite_at_data_end_for_all_builtins() {
        for s in [Scheduler::Ot, Scheduler::Cosine, Scheduler::default_vp()] {
            let f = GmmField::new(s.shared(), GaussianMixture::circle(2, 5, 3.0, 0.09).unwrap());
            let u = f.eval(1.0, &[0.4, -0.2]).unwrap();
            assert!(all_finite(&u));
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in [Scheduler::Ot, Scheduler::Cosine, Scheduler::default_vp()] {
            let f = GmmField::new(s.shared(), GaussianMixture::circle(2, 5, 3.0, 0.09).unwrap());
            for _ in 0..100 {
                let t = rng.random_range(0.0..0.98);
                let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
                let exact = f.jac_x(t, &x).unwrap();
                let fd = fd_jacobian(&f, t, &x).unwrap();
                let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
                for (a, b) in exact.iter().zip(&fd) {
                    assert!((a - b).abs() / scale <= 1e-5, "{s:?} t={t} x={x:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn time_derivative_is_accurate_for_affine_field() {
        let f = GmmField::affine_standard_normal(1);
        for &t in &[0.0f64, 0.0005, 0.3, 0.7, 0.9995, 1.0] {
            let v = t * t + (1.0 - t) * (1.0 - t);
            let exact = (2.0 * v - 2.0 * (2.0 * t - 1.0).powi(2)) / (v * v);
            let got = f.dt(t, &[1.0]).unwrap()[0];
            assert!((got - exact).abs() < 1e-9, "t={t}: {got} vs {exact}");
        }
    }

    #[test]
    fn affine_oracle_examples() {
        let f = GmmField::affine_standard_normal(2);
        let x0 = [1.5, -0.5];
        assert_eq!(affine_oracle_solution(&f, &x0, 0.0).unwrap(), x0.to_vec());
        assert_eq!(affine_oracle_solution(&f, &x0, 1.0).unwrap(), x0.to_vec());
        let half = affine_oracle_solution(&f, &x0, 0.5).unwrap();
        for j in 0..2 {
            assert!((half[j] - x0[j] / 2f64.sqrt()).abs() < 1e-15);
        }
        assert!(matches!(
            affine_oracle_solution(&testbed(), &x0, 0.5),
            Err(BespokeError::Unsupported(_))
        ));
    }

    #[test]
    fn lipschitz_estimate_examples() {
        let affine = GmmField::affine_standard_normal(2);
        let l = lipschitz_estimate(&affine, (0.0, 1.0), 101, 3.0, 1).unwrap();
        assert!((l - 1.0).abs() < 1e-6);
        assert_eq!(affine.lipschitz_hint(), Some(1.0));

        let zero = ZeroField { dim: 2 };
        assert_eq!(lipschitz_estimate(&zero, (0.0, 1.0), 11, 3.0, 1).unwrap(), 0.0);

        let two = GmmField::new(
            Scheduler::Ot.shared(),
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![2.0, 0.0], vec![-2.0, 0.0]], vec![0.1, 0.1])
                .unwrap(),
        );
        let l2 = lipschitz_estimate(&two, (0.0, 1.0), 201, 3.0, 3).unwrap();
        assert!(l2.is_finite() && l2 > 0.0);
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![1.0]).is_ok());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
