//! Fitting scheme parameters: reference-path batches, gradients, Adam and the
//! training loop with validation and best-checkpoint tracking.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::json::fmt_f64;
use crate::loss::{bespoke_loss_gradient, bespoke_loss_with, capture_anchors, rmse_global, LossOptions, TargetMode};
use crate::scheme::{BaseKind, SchemeGrids, SchemeParams};
use crate::solvers::{solve_adaptive, Trajectory};

/// Stream used for the held-out validation batch.
pub const VALIDATION_STREAM: u64 = 0;
/// Stream used for the training batch when it is held fixed.
pub const FIXED_STREAM: u64 = 1;

/// Stream of the `k`-th fresh training batch.
pub fn fresh_stream(k: u64) -> u64 {
    2 + k
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradEngine {
    CentralFd,
    #[default]
    ForwardSens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n: usize,
    pub base_kind: BaseKind,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l_tau: f64,
    pub seed: u64,
    pub grad_engine: GradEngine,
    /// Relative central-difference step. The loss is sharply curved near the
    /// identity scheme, so steps much above 1e-8 lose accuracy there.
    pub fd_epsilon: f64,
    /// Draw a new batch every this many iterations; 0 keeps one batch.
    pub fresh_batch_every: usize,
    pub validation_size: usize,
    pub validation_every: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 5,
            base_kind: BaseKind::Rk2,
            batch_size: 64,
            iterations: 2000,
            learning_rate: 2e-3,
            l_tau: 1.0,
            seed: 0,
            grad_engine: GradEngine::ForwardSens,
            fd_epsilon: 1e-8,
            fresh_batch_every: 1,
            validation_size: 256,
            validation_every: 50,
            rtol: 1e-9,
            atol: 1e-9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BespokeError::InvalidParameter(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon.is_finite()) {
            return bad(format!("fd_epsilon must be positive, got {}", self.fd_epsilon));
        }
        if !(self.l_tau >= 0.0 && self.l_tau.is_finite()) {
            return bad(format!("l_tau must be non-negative, got {}", self.l_tau));
        }
        if self.validation_size == 0 {
            return bad("validation_size must be at least 1".into());
        }
        if self.validation_every == 0 {
            return bad("validation_every must be at least 1".into());
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("solver tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            l_tau: self.l_tau,
            global_error: false,
            ..LossOptions::default()
        }
    }

    /// Stream of the training batch used at `iteration`.
    pub fn train_stream(&self, iteration: usize) -> u64 {
        if self.fresh_batch_every == 0 {
            FIXED_STREAM
        } else {
            fresh_stream((iteration / self.fresh_batch_every) as u64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// In-place bias-corrected Adam step.
    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..theta.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub fn adam_update(state: &AdamState, theta: &[f64], grad: &[f64], lr: f64) -> (Vec<f64>, AdamState) {
    let mut next = state.clone();
    let mut out = theta.to_vec();
    next.apply(&mut out, grad, lr);
    (out, next)
}

/// `[L(θ + ε_k e_k) − L(θ − ε_k e_k)] / 2ε_k` with `ε_k = eps (1 + |θ_k|)`.
/// Coordinates are probed in parallel.
pub fn central_difference_gradient<L>(loss: L, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    L: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..theta.len())
        .into_par_iter()
        .map(|k| {
            let h = eps * (1.0 + theta[k].abs());
            let probe = |delta: f64| -> Result<f64> {
                let mut v = theta.to_vec();
                v[k] += delta;
                match loss(&v) {
                    Ok(l) if l.is_finite() => Ok(l),
                    Ok(_) => Err(BespokeError::ProbeFailure { coordinate: k }),
                    Err(e) if e.is_numerical() => Err(BespokeError::ProbeFailure { coordinate: k }),
                    Err(e) => Err(e),
                }
            };
            Ok((probe(h)? - probe(-h)?) / (2.0 * h))
        })
        .collect()
}

/// Loss value and gradient with respect to the flat parameters. Anchors are
/// captured once at `params` and held fixed for every probe.
pub fn loss_and_gradient<F: VelocityField + ?Sized>(
    params: &SchemeParams,
    f: &F,
    batch: &[Trajectory],
    engine: GradEngine,
    fd_epsilon: f64,
    opts: &LossOptions,
) -> Result<(f64, Vec<f64>)> {
    let g = params.materialize()?;
    let anchors = match opts.target {
        TargetMode::Aux => Some(
            batch
                .par_iter()
                .map(|t| capture_anchors(&g, f, t, opts.interpolation))
                .collect::<Result<Vec<_>>>()?,
        ),
        TargetMode::Raw => None,
    };
    let anchors = anchors.as_deref();
    let value = bespoke_loss_with(&g, f, batch, anchors, opts)?.total;
    let grad = match engine {
        GradEngine::ForwardSens => bespoke_loss_gradient(params, f, batch, anchors, opts)?.1,
        GradEngine::CentralFd => {
            let loss = |theta: &[f64]| -> Result<f64> {
                let g = SchemeParams::from_vec(params.base_kind, params.n, theta)?.materialize()?;
                Ok(bespoke_loss_with(&g, f, batch, anchors, opts)?.total)
            };
            central_difference_gradient(loss, &params.to_vec(), fd_epsilon)?
        }
    };
    if let Some(k) = grad.iter().position(|v| !v.is_finite()) {
        return Err(BespokeError::ProbeFailure { coordinate: k });
    }
    Ok((value, grad))
}

/// `size` i.i.d. standard normal starting points from `(seed, stream)`.
pub fn draw_x0(dim: usize, size: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..size)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// Accurate solves from each starting point, in order.
pub fn solve_paths<F: VelocityField + ?Sized>(f: &F, x0: &[Vec<f64>], rtol: f64, atol: f64) -> Result<Vec<Trajectory>> {
    x0.par_iter()
        .enumerate()
        .map(|(index, x)| {
            solve_adaptive(f, x, rtol, atol, 1.0).map_err(|e| BespokeError::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Batch of reference paths from standard normal starts.
pub fn prepare_gt_batch<F: VelocityField + ?Sized>(
    f: &F,
    batch_size: usize,
    seed: u64,
    stream: u64,
    rtol: f64,
    atol: f64,
) -> Result<Vec<Trajectory>> {
    solve_paths(f, &draw_x0(f.dim(), batch_size, seed, stream), rtol, atol)
}

/// Source of reference-path batches, keyed by `(seed, stream, size)`.
/// Implementations may cache, but must return what `prepare_gt_batch` would.
pub trait GtProvider {
    fn paths(&mut self, seed: u64, stream: u64, size: usize) -> Result<Vec<Trajectory>>;
}

/// Solves every requested batch afresh.
pub struct DirectGt<'a, F: VelocityField + ?Sized> {
    pub field: &'a F,
    pub rtol: f64,
    pub atol: f64,
}

impl<F: VelocityField + ?Sized> GtProvider for DirectGt<'_, F> {
    fn paths(&mut self, seed: u64, stream: u64, size: usize) -> Result<Vec<Trajectory>> {
        prepare_gt_batch(self.field, size, seed, stream, self.rtol, self.atol)
    }
}

/// Batch-mean endpoint error of the scheme on the given reference paths.
pub fn validation_rmse<F: VelocityField + ?Sized>(g: &SchemeGrids, f: &F, paths: &[Trajectory]) -> Result<f64> {
    let x0: Vec<Vec<f64>> = paths.iter().map(|t| t.initial_state().to_vec()).collect();
    let x1: Vec<Vec<f64>> = paths.iter().map(|t| t.final_state().to_vec()).collect();
    rmse_global(g, f, &x0, &x1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Loss at the parameters before update `i`, for each iteration `i`.
    pub train_loss: Vec<f64>,
    /// `(iteration, rmse)` with the parameters before update `iteration`;
    /// the last entry is taken after the final update.
    pub validation: Vec<(usize, f64)>,
    /// Iterations whose update was rejected.
    pub rejected: Vec<usize>,
    pub best_iteration: usize,
    pub best_val_rmse: f64,
    pub init_val_rmse: f64,
    pub wall_clock_s: f64,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.train_loss == other.train_loss
            && self.validation == other.validation
            && self.rejected == other.rejected
            && self.best_iteration == other.best_iteration
            && self.best_val_rmse == other.best_val_rmse
            && self.init_val_rmse == other.init_val_rmse
    }
}

impl TrainHistory {
    pub fn final_val_rmse(&self) -> f64 {
        self.validation.last().map_or(f64::NAN, |v| v.1)
    }

    /// CSV `iteration,train_loss,val_rmse`, one row per iteration plus a
    /// final row for the post-training validation. Missing cells are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,train_loss,val_rmse")?;
        let mut val = self.validation.iter().peekable();
        for i in 0..=self.train_loss.len() {
            let loss = self.train_loss.get(i).map(|v| fmt_f64(*v)).unwrap_or_default();
            let rmse = match val.peek() {
                Some((j, r)) if *j == i => {
                    val.next();
                    fmt_f64(*r)
                }
                _ => String::new(),
            };
            if loss.is_empty() && rmse.is_empty() {
                continue;
            }
            writeln!(w, "{i},{loss},{rmse}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation RMSE.
    pub best: SchemeParams,
    /// Parameters after the last iteration.
    pub last: SchemeParams,
    pub history: TrainHistory,
}

const MAX_CONSECUTIVE_REJECTIONS: usize = 3;

/// Train with reference paths solved on demand.
pub fn train<F: VelocityField + ?Sized>(cfg: &TrainConfig, f: &F) -> Result<TrainOutcome> {
    let mut gt = DirectGt {
        field: f,
        rtol: cfg.rtol,
        atol: cfg.atol,
    };
    train_with(cfg, f, &mut gt)
}

/// The training loop: start from the identity scheme, then per iteration
/// take a batch, compute the loss gradient and apply an Adam step. Updates
/// that produce invalid grids or non-finite gradients are skipped; three in
/// a row abort the run.
pub fn train_with<F: VelocityField + ?Sized, P: GtProvider + ?Sized>(cfg: &TrainConfig, f: &F, gt: &mut P) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let opts = cfg.loss_options();
    let val_paths = gt.paths(cfg.seed, VALIDATION_STREAM, cfg.validation_size)?;

    let mut params = SchemeParams::identity(cfg.base_kind, cfg.n)?;
    let mut theta = params.to_vec();
    let mut adam = AdamState::new(theta.len());

    let init_val = validation_rmse(&params.materialize()?, f, &val_paths)?;
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.iterations),
        validation: vec![(0, init_val)],
        rejected: Vec::new(),
        best_iteration: 0,
        best_val_rmse: init_val,
        init_val_rmse: init_val,
        wall_clock_s: 0.0,
    };
    let mut best = params.clone();
    let mut consecutive = 0usize;
    let mut batch: Option<(u64, Vec<Trajectory>)> = None;

    for it in 0..cfg.iterations {
        let stream = cfg.train_stream(it);
        if batch.as_ref().is_none_or(|(s, _)| *s != stream) {
            batch = Some((stream, gt.paths(cfg.seed, stream, cfg.batch_size)?));
        }
        let paths = &batch.as_ref().expect("batch loaded").1;

        let step = loss_and_gradient(&params, f, paths, cfg.grad_engine, cfg.fd_epsilon, &opts);
        let accepted = match step {
            Ok((loss, grad)) => {
                history.train_loss.push(loss);
                let mut next_adam = adam.clone();
                let mut next = theta.clone();
                next_adam.apply(&mut next, &grad, cfg.learning_rate);
                match SchemeParams::from_vec(cfg.base_kind, cfg.n, &next).and_then(|p| p.materialize().map(|_| p)) {
                    Ok(p) => {
                        params = p;
                        theta = next;
                        adam = next_adam;
                        true
                    }
                    Err(e) if e.is_numerical() => {
                        log::warn!("iteration {it}: rejected update ({e})");
                        false
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) if e.is_numerical() => {
                log::warn!("iteration {it}: gradient failed ({e})");
                history.train_loss.push(f64::NAN);
                false
            }
            Err(e) => return Err(e),
        };
        if accepted {
            consecutive = 0;
        } else {
            history.rejected.push(it);
            consecutive += 1;
            if consecutive >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(BespokeError::DegenerateGrid(format!(
                    "{MAX_CONSECUTIVE_REJECTIONS} consecutive rejected updates ending at iteration {it}"
                )));
            }
        }

        let done = it + 1;
        if done % cfg.validation_every == 0 || done == cfg.iterations {
            let val = validation_rmse(&params.materialize()?, f, &val_paths)?;
            history.validation.push((done, val));
            if val < history.best_val_rmse {
                history.best_val_rmse = val;
                history.best_iteration = done;
                best = params.clone();
            }
            log::info!("iteration {done}: train loss {:.6e}, validation rmse {val:.6e}", history.train_loss[it]);
        }
    }
    history.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        best,
        last: params,
        history,
    })
}
