//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::SQRT_2;
use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use bespoke_core::evaluation::{base_step_order, bespoke_step_order, log_log_slope, scheduler_equivalence, EquivalenceOptions, ScaleTimeMap};
use bespoke_core::fields::{affine_oracle_solution, GmmField, VelocityField};
use bespoke_core::loss::{bespoke_loss, lipschitz_step, rmse_global};
use bespoke_core::scheme::{bespoke_rollout, bespoke_sample, bespoke_step, BaseKind, Node, SchemeGrids, SchemeParams, SmoothScaleTime};
use bespoke_core::schedulers::Scheduler;
use bespoke_core::solvers::{solve_adaptive, solve_fixed, StepKind};
use bespoke_core::training::{draw_x0, loss_and_gradient, prepare_gt_batch, train, GradEngine, TrainConfig, FIXED_STREAM};
use bespoke_core::vector::{l2_norm, max_abs_diff};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Improvement ratio (best / initial validation RMSE) of the reference
/// training run with default settings and seed 0.
const GOLDEN_IMPROVEMENT_RATIO: f64 = 0.637_283_081_438_085_2;

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(v: f64, center: f64, half: f64) -> bool {
    (v - center).abs() <= half
}

/// A random valid scheme with unstructured node values.
fn random_params(rng: &mut ChaCha8Rng, kind: BaseKind, n: usize) -> SchemeParams {
    let m = n * kind.slots_per_step();
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..m).map(|_| rng.random_range(lo..hi)).collect() };
    SchemeParams {
        base_kind: kind,
        n,
        theta_t: draw(0.2, 1.0),
        theta_dt: draw(0.2, 2.0),
        theta_s: draw(-0.5, 0.5),
        theta_ds: draw(-1.0, 1.0),
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let f = GmmField::testbed();
    let paths = draw_x0(2, 8, 0, 1 << 33)
        .iter()
        .map(|x0| solve_adaptive(&f, x0, 1e-11, 1e-11, 1.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let hs = [1.0 / 10.0, 1.0 / 20.0, 1.0 / 40.0, 1.0 / 80.0];
    let anchors = [0.1, 0.3, 0.5, 0.7];
    let rk1 = base_step_order(&f, StepKind::Rk1, &paths, &anchors, &hs).map_err(err)?;
    let rk2 = base_step_order(&f, StepKind::Rk2, &paths, &anchors, &hs).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let ok = within(rk1.slope, 2.0, 0.3) && within(rk2.slope, 3.0, 0.3) && secs < 10.0;
    Ok((ok, format!("rk1 slope {:.3}, rk2 slope {:.3}, {secs:.2}s", rk1.slope, rk2.slope)))
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let f = GmmField::testbed();
    let members = SmoothScaleTime::sample_seeded(2, 10, 3);
    let x0 = draw_x0(2, 64, 2, 1 << 33);
    let paths = x0
        .iter()
        .map(|x| solve_adaptive(&f, x, 1e-11, 1e-11, 1.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let hs = [1.0 / 10.0, 1.0 / 20.0, 1.0 / 40.0, 1.0 / 80.0];
    let anchors = [0.1, 0.3, 0.5, 0.7];
    let x1: Vec<Vec<f64>> = paths.iter().map(|p| p.final_state().to_vec()).collect();
    let ns = [5usize, 10, 20, 40];
    let inv_n: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let global_slope = |fam: &SmoothScaleTime| -> Result<f64, String> {
        let rmse = ns
            .iter()
            .map(|&n| rmse_global(&fam.grids(BaseKind::Rk2, n).map_err(err)?, &f, &x0, &x1).map_err(err))
            .collect::<Result<Vec<f64>, String>>()?;
        Ok(log_log_slope(&inv_n, &rmse))
    };

    let (mut rk1, mut rk2, mut global) = (Vec::new(), Vec::new(), Vec::new());
    for fam in &members {
        rk1.push(bespoke_step_order(&f, fam, BaseKind::Rk1, &paths[..8], &anchors, &hs).map_err(err)?.slope);
        rk2.push(bespoke_step_order(&f, fam, BaseKind::Rk2, &paths[..8], &anchors, &hs).map_err(err)?.slope);
        global.push(global_slope(fam)?);
    }
    let plain = global_slope(&SmoothScaleTime::identity())?;
    let secs = start.elapsed().as_secs_f64();
    let range = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let ok = rk1.iter().all(|&s| within(s, 2.0, 0.3))
        && rk2.iter().all(|&s| within(s, 3.0, 0.3))
        && global.iter().all(|&s| within(s, 2.0, 0.3))
        && secs < 60.0;
    let (a, b, c) = (range(&rk1), range(&rk2), range(&global));
    Ok((
        ok,
        format!(
            "local rk1 [{:.3}, {:.3}], local rk2 [{:.3}, {:.3}], global rk2 [{:.3}, {:.3}] over 10 schemes \
             (plain rk2 global {plain:.3}), {secs:.2}s",
            a.0, a.1, b.0, b.1, c.0, c.1
        ),
    ))
}

fn ac3() -> Outcome {
    let f = GmmField::testbed();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for (k, x0) in draw_x0(2, 100, 3, 0).into_iter().enumerate() {
        let kind = if k % 2 == 0 { BaseKind::Rk1 } else { BaseKind::Rk2 };
        let n = rng.random_range(1..=20);
        let g = SchemeGrids::identity(kind, n).map_err(err)?;
        let ours = bespoke_rollout(&g, &f, &x0).map_err(err)?;
        let plain = solve_fixed(&f, kind.step_kind(), n, &x0).map_err(err)?;
        for (a, b) in ours.iter().zip(&plain.states) {
            worst = worst.max(max_abs_diff(a, b));
        }
        worst = worst.max(max_abs_diff(&bespoke_sample(&g, &f, &x0).map_err(err)?, plain.final_state()));
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.3e} on 100 inputs")))
}

/// `ū(x̄) = (ṡ/s) x̄ + ṫ s u_t(x̄/s)` written out from the definition.
fn ubar(f: &GmmField, nd: &Node, xbar: &[f64]) -> Result<Vec<f64>, String> {
    let x: Vec<f64> = xbar.iter().map(|v| v / nd.s).collect();
    let u = f.eval(nd.t, &x).map_err(err)?;
    Ok(xbar.iter().zip(&u).map(|(xb, ui)| nd.ds / nd.s * xb + nd.dt * nd.s * ui).collect())
}

/// Transform to `x̄`, take one plain step on `ū`, transform back.
fn pipeline_step(g: &SchemeGrids, f: &GmmField, i: usize, x: &[f64]) -> Result<Vec<f64>, String> {
    let h = g.h();
    let spp = g.base_kind.slots_per_step();
    let k = spp * i;
    let xbar: Vec<f64> = x.iter().map(|v| g.s[k] * v).collect();
    let next = match g.base_kind {
        BaseKind::Rk1 => {
            let v = ubar(f, &g.node(k), &xbar)?;
            xbar.iter().zip(&v).map(|(a, b)| a + h * b).collect::<Vec<_>>()
        }
        BaseKind::Rk2 => {
            let v0 = ubar(f, &g.node(k), &xbar)?;
            let mid: Vec<f64> = xbar.iter().zip(&v0).map(|(a, b)| a + 0.5 * h * b).collect();
            let v1 = ubar(f, &g.node(k + 1), &mid)?;
            xbar.iter().zip(&v1).map(|(a, b)| a + h * b).collect()
        }
    };
    Ok(next.iter().map(|v| v / g.s[k + spp]).collect())
}

fn ac4() -> Outcome {
    let f = GmmField::testbed();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut step_dev, mut sample_dev) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let kind = if k % 2 == 0 { BaseKind::Rk1 } else { BaseKind::Rk2 };
        let n = rng.random_range(1..=12);
        let g = random_params(&mut rng, kind, n).materialize().map_err(err)?;
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let i = rng.random_range(0..n);
        let direct = bespoke_step(&g, i, &x, &f).map_err(err)?;
        step_dev = step_dev.max(max_abs_diff(&direct, &pipeline_step(&g, &f, i, &x)?));

        let mut y = x.clone();
        for j in 0..n {
            y = bespoke_step(&g, j, &y, &f).map_err(err)?;
        }
        sample_dev = sample_dev.max(max_abs_diff(&y, &bespoke_sample(&g, &f, &x).map_err(err)?));
    }
    let ok = step_dev <= 1e-13 && sample_dev <= 1e-12;
    Ok((ok, format!("step vs pipeline {step_dev:.3e}, sampler vs iterated step {sample_dev:.3e}")))
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let f = GmmField::affine_standard_normal(2);
    let batch = prepare_gt_batch(&f, 32, 5, FIXED_STREAM, 1e-10, 1e-10).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut violations, mut sample_violations) = (0usize, 0usize);
    let mut min_gap = f64::INFINITY;
    for k in 0..100 {
        let kind = if k % 2 == 0 { BaseKind::Rk1 } else { BaseKind::Rk2 };
        let n = rng.random_range(2..=10);
        let g = SmoothScaleTime::sample(&mut rng, 3).grids(kind, n).map_err(err)?;
        let lb = bespoke_loss(&g, &f, &batch, 1.0).map_err(err)?;
        let e_n = lb.e_n.ok_or("loss did not report the global error")?;
        min_gap = min_gap.min(lb.total - e_n);
        if e_n > lb.total + 1e-12 {
            violations += 1;
        }
        sample_violations += lb.per_sample_e_n.iter().zip(&lb.per_sample_total).filter(|(e, t)| **e > **t + 1e-12).count();
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = violations == 0 && sample_violations == 0 && secs < 30.0;
    Ok((
        ok,
        format!("{violations} batch-mean and {sample_violations} per-sample violations, min slack {min_gap:.3e}, {secs:.2}s"),
    ))
}

fn ac6() -> Outcome {
    let f = GmmField::affine_standard_normal(2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for k in 0..20 {
        let kind = if k % 2 == 0 { BaseKind::Rk1 } else { BaseKind::Rk2 };
        let n = rng.random_range(2..=10);
        let g = random_params(&mut rng, kind, n).materialize().map_err(err)?;
        for _ in 0..1000 {
            let i = rng.random_range(0..n);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let sx = bespoke_step(&g, i, &x, &f).map_err(err)?;
            let sy = bespoke_step(&g, i, &y, &f).map_err(err)?;
            let dstep: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
            let ratio = l2_norm(&dstep) / (lipschitz_step(&g, i, 1.0) * l2_norm(&dxy));
            worst = worst.max(ratio);
            if ratio > 1.0 + 1e-12 {
                violations += 1;
            }
        }
    }
    Ok((violations == 0, format!("{violations} violations in 20000 pairs, max ratio {worst:.6}")))
}

fn ac7() -> Outcome {
    let q = GmmField::testbed().mixture().clone();
    let x0 = draw_x0(2, 16, 7, 0);
    let scheds = [Scheduler::Ot, Scheduler::Cosine, Scheduler::Vp { b_max: 20.0, b_min: 0.1 }];
    let mut ok = true;
    let mut parts = Vec::new();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let rep = scheduler_equivalence(scheds[i], scheds[j], &q, &x0, &EquivalenceOptions { seed: 7, ..Default::default() })
                .map_err(err)?;
            ok &= rep.max_path_residual <= 1e-5 && rep.max_field_rel_error <= 1e-8;
            parts.push(format!(
                "{}/{} path {:.2e} field {:.2e}",
                rep.scheduler_a, rep.scheduler_b, rep.max_path_residual, rep.max_field_rel_error
            ));
        }
    }
    let spot = ScaleTimeMap::new(Scheduler::Ot, Scheduler::Cosine).at(0.5).map_err(err)?;
    ok &= within(spot.t, 0.5, 1e-12) && within(spot.s, SQRT_2, 1e-12);
    parts.push(format!("spot (t, s) = ({:.12}, {:.12})", spot.t, spot.s));
    Ok((ok, parts.join("; ")))
}

fn ac8() -> Outcome {
    let f = GmmField::testbed();
    let cfg = TrainConfig::default();
    let opts = cfg.loss_options();
    let batch = prepare_gt_batch(&f, 16, 8, FIXED_STREAM, cfg.rtol, cfg.atol).map_err(err)?;
    let mut points = vec![SchemeParams::identity(BaseKind::Rk2, 5).map_err(err)?];
    for fam in SmoothScaleTime::sample_seeded(8, 5, 3) {
        points.push(SchemeParams::from_grids(&fam.grids(BaseKind::Rk2, 5).map_err(err)?));
    }
    let mut worst = 0.0f64;
    for p in &points {
        let (_, fs) = loss_and_gradient(p, &f, &batch, GradEngine::ForwardSens, cfg.fd_epsilon, &opts).map_err(err)?;
        let (_, fd) = loss_and_gradient(p, &f, &batch, GradEngine::CentralFd, cfg.fd_epsilon, &opts).map_err(err)?;
        let diff: Vec<f64> = fd.iter().zip(&fs).map(|(a, b)| a - b).collect();
        worst = worst.max(l2_norm(&diff) / l2_norm(&fs));
    }
    Ok((worst <= 1e-4, format!("max relative difference {worst:.3e} at identity and 5 random parameter vectors")))
}

fn ac9() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let out = train(&cfg, &GmmField::testbed()).map_err(err)?;
    let h = &out.history;
    let ratio = h.best_val_rmse / h.init_val_rmse;
    let rel = (ratio - GOLDEN_IMPROVEMENT_RATIO).abs() / GOLDEN_IMPROVEMENT_RATIO;
    let ok = h.best_val_rmse < h.init_val_rmse && rel <= 0.05;
    Ok((
        ok,
        format!(
            "val rmse {:.6e} -> {:.6e} (iteration {}), ratio {ratio:.8} vs golden {GOLDEN_IMPROVEMENT_RATIO:.8} ({:.2e} rel), {:.1}s",
            h.init_val_rmse,
            h.best_val_rmse,
            h.best_iteration,
            rel,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn ac10() -> Outcome {
    let f = GmmField::affine_standard_normal(2);
    let mut worst = 0.0f64;
    for x0 in draw_x0(2, 8, 10, 0) {
        let traj = solve_adaptive(&f, &x0, 1e-9, 1e-9, 1.0).map_err(err)?;
        for j in 0..=1000 {
            let t = j as f64 / 1000.0;
            let exact = affine_oracle_solution(&f, &x0, t).map_err(err)?;
            worst = worst.max(max_abs_diff(&exact, &traj.interpolate(t).map_err(err)?));
        }
    }
    Ok((worst <= 1e-7, format!("max error {worst:.3e} on 1001 points x 8 paths")))
}

fn ac11() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = tmp.path();
    fs::write(
        dir.join("run.toml"),
        "[train]\niterations = 40\nbatch_size = 16\nvalidation_size = 32\nvalidation_every = 10\nseed = 11\n",
    )
    .map_err(err)?;
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out = format!("t{threads}");
        let status = Command::new(env!("CARGO_BIN_EXE_bespoke"))
            .current_dir(dir)
            .args(["train", "--config", "run.toml", "--threads", threads, "--out", &out, "--cache", &format!("{out}/gt")])
            .output()
            .map_err(err)?;
        if !status.status.success() {
            return Err(format!("train with {threads} threads failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        files.push(fs::read(dir.join(&out).join("scheme.json")).map_err(err)?);
    }
    let same = files[0] == files[1];
    Ok((same, format!("scheme files {} ({} bytes)", if same { "identical" } else { "differ" }, files[0].len())))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("AC1", "base solver local order", ac1),
        ("AC2", "bespoke consistency", ac2),
        ("AC3", "identity reduction", ac3),
        ("AC4", "composition equivalence", ac4),
        ("AC5", "RMSE bound", ac5),
        ("AC6", "step Lipschitz bound", ac6),
        ("AC7", "scheduler equivalence", ac7),
        ("AC8", "gradient engines agree", ac8),
        ("AC9", "training efficacy", ac9),
        ("AC10", "affine oracle", ac10),
        ("AC11", "determinism across thread counts", ac11),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let (ok, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {id} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of 11 criteria failed");
        ExitCode::FAILURE
    }
}
