use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bespoke_core::evaluation::{base_step_order, bespoke_step_order, scheduler_equivalence, sweep, EquivalenceOptions, OrderFit, SolverSpec};
use bespoke_core::fields::{GmmField, VelocityField};
use bespoke_core::json::{fmt_f64, to_string};
use bespoke_core::scheme::{bespoke_sample, BaseKind, Scheme, SmoothScaleTime};
use bespoke_core::solvers::StepKind;
use bespoke_core::training::{draw_x0, train_with, GtProvider};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cache::{GtCache, EVAL_STREAM, ORDER_STREAM};
use crate::config::{parse_baseline, Baseline, OrderTarget, RunConfig};
use crate::{Builtin, Cli, CliError, Command};

const FAMILY_TERMS: usize = 3;

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    cache: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.override_seed(seed);
        }
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.io.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let cache = cli
            .cache
            .clone()
            .or_else(|| cfg.io.cache_dir.clone())
            .unwrap_or_else(|| out.join("gt-cache"));
        Ok(Self { cfg, out, cache })
    }

    fn field(&self) -> Result<GmmField, CliError> {
        self.cfg.testbed.field()
    }

    fn gt<'a>(&self, f: &'a GmmField, rtol: f64, atol: f64) -> GtCache<'a, GmmField> {
        GtCache::new(f, self.cfg.testbed.fingerprint(), rtol, atol, Some(self.cache.clone()))
    }

    fn out_file(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.out_file(name)?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn run_command(cli: &Cli) -> Result<(), CliError> {
    if let Command::ValidateConfig = cli.command {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("validate-config needs --config".into()))?;
        RunConfig::load(path)?;
        println!("{}: ok", path.display());
        return Ok(());
    }
    let ctx = Context::new(cli)?;
    let name = command_name(&cli.command);
    let result = match &cli.command {
        Command::Train => cmd_train(&ctx),
        Command::Sample {
            scheme,
            builtin,
            steps,
            count,
            output,
        } => cmd_sample(&ctx, scheme.as_deref(), *builtin, *steps, *count, cli.seed.unwrap_or(0), output.as_deref()),
        Command::Eval => cmd_eval(&ctx),
        Command::Order => cmd_order(&ctx),
        Command::Equiv => cmd_equiv(&ctx),
        Command::ValidateConfig => unreachable!(),
    };
    if let Err(CliError::Numerical(e)) = &result {
        let diag = json!({ "command": name, "error": e.to_string(), "kind": "numerical" });
        if let Ok(text) = to_string(&diag) {
            if let Ok(p) = ctx.write("diagnostic.json", &text) {
                eprintln!("diagnostic written to {}", p.display());
            }
        }
    }
    result
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train => "train",
        Command::Sample { .. } => "sample",
        Command::Eval => "eval",
        Command::Order => "order",
        Command::Equiv => "equiv",
        Command::ValidateConfig => "validate-config",
    }
}

fn json_text<T: Serialize>(v: &T) -> Result<String, CliError> {
    Ok(to_string(v)?)
}

fn cmd_train(ctx: &Context) -> Result<(), CliError> {
    let f = ctx.field()?;
    let tc = ctx.cfg.train_config();
    let mut gt = ctx.gt(&f, tc.rtol, tc.atol);
    let outcome = train_with(&tc, &f, &mut gt)?;
    let h = &outcome.history;

    let scheme = Scheme::new(outcome.best.clone());
    let scheme_path = ctx.write("scheme.json", &scheme.to_json()?)?;
    let history_path = ctx.out_file("history.csv")?;
    {
        let mut w = BufWriter::new(fs::File::create(&history_path)?);
        h.write_csv(&mut w)?;
        w.flush()?;
    }
    let summary = json!({
        "command": "train",
        "base_kind": tc.base_kind.name(),
        "n": tc.n,
        "nfe": scheme.grids()?.nfe(),
        "iterations": tc.iterations,
        "rejected_iterations": h.rejected.len(),
        "init_val_rmse": h.init_val_rmse,
        "best_val_rmse": h.best_val_rmse,
        "final_val_rmse": h.final_val_rmse(),
        "best_iteration": h.best_iteration,
        "improvement_ratio": h.best_val_rmse / h.init_val_rmse,
        "wall_clock_s": h.wall_clock_s,
        "cache_hits": gt.hits,
        "cache_misses": gt.misses,
        "seed": tc.seed,
        "scheme": scheme_path.display().to_string(),
        "history": history_path.display().to_string(),
    });
    ctx.write("summary.json", &json_text(&summary)?)?;
    println!(
        "validation rmse {:.6e} -> {:.6e} (best at iteration {}), {:.1}s",
        h.init_val_rmse, h.best_val_rmse, h.best_iteration, h.wall_clock_s
    );
    Ok(())
}

fn load_scheme(path: &Path) -> Result<Scheme, CliError> {
    Scheme::load(path).map_err(|e| match e {
        bespoke_core::BespokeError::Io(io) if io.kind() != std::io::ErrorKind::NotFound => CliError::Io(io),
        e => CliError::Config(format!("{}: {e}", path.display())),
    })
}

fn cmd_sample(
    ctx: &Context,
    scheme: Option<&Path>,
    builtin: Option<Builtin>,
    steps: Option<usize>,
    count: usize,
    seed: u64,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let f = ctx.field()?;
    let scheme = match (scheme, builtin) {
        (Some(p), _) => load_scheme(p)?,
        (None, Some(b)) => {
            let kind = match b {
                Builtin::PlainRk1 => BaseKind::Rk1,
                Builtin::PlainRk2 => BaseKind::Rk2,
            };
            let n = steps.unwrap_or(ctx.cfg.solver.n);
            Scheme::identity(kind, n).map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, None) => return Err(CliError::Config("sample needs --scheme or --builtin".into())),
    };
    let g = scheme.grids().map_err(|e| CliError::Config(e.to_string()))?;
    let d = f.dim();
    let x0 = draw_x0(d, count, seed, 0);
    let xn = x0.iter().map(|x| bespoke_sample(&g, &f, x)).collect::<Result<Vec<_>, _>>()?;

    let path = match output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            p.to_path_buf()
        }
        None => ctx.out_file("samples.csv")?,
    };
    let mut w = BufWriter::new(fs::File::create(&path)?);
    let header: Vec<String> = (0..d).map(|k| format!("x0_{k}")).chain((0..d).map(|k| format!("xn_{k}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for (a, b) in x0.iter().zip(&xn) {
        let row: Vec<String> = a.iter().chain(b).map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(ctx: &Context) -> Result<(), CliError> {
    let e = &ctx.cfg.eval;
    let f = ctx.field()?;
    let mut gt = ctx.gt(&f, e.rtol, e.atol);
    let paths = gt.paths(e.seed, EVAL_STREAM, e.batch_size)?;
    let x0: Vec<Vec<f64>> = paths.iter().map(|p| p.initial_state().to_vec()).collect();
    let reference: Vec<Vec<f64>> = paths.iter().map(|p| p.final_state().to_vec()).collect();

    let mut solvers: Vec<SolverSpec> = e
        .baselines
        .iter()
        .map(|b| {
            parse_baseline(b).map(|b| match b {
                Baseline::Plain(k) => SolverSpec::Plain(k),
                Baseline::Identity(k) => SolverSpec::Identity(k),
            })
        })
        .collect::<Result<_, _>>()?;
    if !e.schemes.is_empty() {
        let grids = e
            .schemes
            .iter()
            .map(|p| load_scheme(p)?.grids().map_err(|err| CliError::Config(format!("{}: {err}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        solvers.push(SolverSpec::Bespoke {
            label: e.label.clone(),
            schemes: grids,
        });
    }
    let report = sweep(&f, &solvers, &e.nfe_grid, &x0, &reference, e.peak).map_err(|err| match err {
        bespoke_core::BespokeError::InvalidParameter(m) => CliError::Config(m),
        other => other.into(),
    })?;
    let csv = ctx.out_file("eval.csv")?;
    {
        let mut w = BufWriter::new(fs::File::create(&csv)?);
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut json = serde_json::to_value(&report).map_err(|err| CliError::Config(err.to_string()))?;
    json["cache_hits"] = json!(gt.hits);
    json["cache_misses"] = json!(gt.misses);
    ctx.write("eval.json", &json_text(&json)?)?;
    for r in &report.rows {
        println!("{:>16} nfe {:>3}: rmse {:.6e} psnr {:.3}", r.solver, r.nfe, r.rmse, r.psnr);
    }
    Ok(())
}

fn cmd_order(ctx: &Context) -> Result<(), CliError> {
    let o = &ctx.cfg.order;
    let kind = o.step_kind()?;
    let (lo, hi) = o.band()?;
    let f = ctx.field()?;
    let mut gt = ctx.gt(&f, 1e-12, 1e-12);
    let paths = gt.paths(o.seed, ORDER_STREAM, o.paths)?;
    let h_grid: Vec<f64> = o.n_grid.iter().map(|&n| 1.0 / n as f64).collect();

    let fits: Vec<(String, OrderFit)> = match o.target {
        OrderTarget::Base => vec![(kind.name().to_string(), base_step_order(&f, kind, &paths, &o.anchors, &h_grid)?)],
        OrderTarget::Bespoke => {
            let base = match kind {
                StepKind::Rk1 => BaseKind::Rk1,
                StepKind::Rk2 => BaseKind::Rk2,
                StepKind::Rk4 => return Err(CliError::Config("bespoke order checks support rk1 and rk2 only".into())),
            };
            SmoothScaleTime::sample_seeded(o.seed, o.schemes, FAMILY_TERMS)
                .iter()
                .enumerate()
                .map(|(i, fam)| Ok((format!("bespoke-{}-{i}", base.name()), bespoke_step_order(&f, fam, base, &paths, &o.anchors, &h_grid)?)))
                .collect::<Result<_, CliError>>()?
        }
    };
    let failing: Vec<&str> = fits
        .iter()
        .filter(|(_, fit)| !(fit.slope >= lo && fit.slope <= hi))
        .map(|(l, _)| l.as_str())
        .collect();
    let mut report = BTreeMap::new();
    report.insert("target", json!(o.target));
    report.insert("kind", json!(kind.name()));
    report.insert("slope_min", json!(lo));
    report.insert("slope_max", json!(hi));
    report.insert("h_grid", json!(h_grid));
    report.insert("fits", serde_json::to_value(&fits).map_err(|e| CliError::Config(e.to_string()))?);
    report.insert("pass", Value::Bool(failing.is_empty()));
    ctx.write("order.json", &json_text(&report)?)?;
    for (label, fit) in &fits {
        println!("{label}: slope {:.4} ± {:.4}", fit.slope, fit.half_width);
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("slope outside [{lo}, {hi}] for {}", failing.join(", "))))
    }
}

fn cmd_equiv(ctx: &Context) -> Result<(), CliError> {
    let e = &ctx.cfg.equiv;
    let (a, b) = ctx.cfg.equiv_schedulers()?;
    let q = ctx.cfg.testbed.mixture()?;
    let x0 = draw_x0(q.dim(), e.batch, e.seed, 0);
    let opts = EquivalenceOptions {
        rtol: e.rtol,
        atol: e.atol,
        r_lo: e.r_lo,
        r_hi: e.r_hi,
        r_points: e.r_points,
        field_points: e.field_points,
        seed: e.seed,
    };
    let report = scheduler_equivalence(a, b, &q, &x0, &opts)?;
    let pass = report.max_path_residual <= e.max_path_residual && report.max_field_rel_error <= e.max_field_rel_error;
    let mut json = serde_json::to_value(&report).map_err(|err| CliError::Config(err.to_string()))?;
    json["max_path_residual_tol"] = json!(e.max_path_residual);
    json["max_field_rel_error_tol"] = json!(e.max_field_rel_error);
    json["pass"] = json!(pass);
    ctx.write("equiv.json", &json_text(&json)?)?;
    println!(
        "{} vs {}: path residual {:.3e}, field rel. error {:.3e}",
        report.scheduler_a, report.scheduler_b, report.max_path_residual, report.max_field_rel_error
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "path residual {:e} (tol {:e}), field error {:e} (tol {:e})",
            report.max_path_residual, e.max_path_residual, report.max_field_rel_error, e.max_field_rel_error
        )))
    }
}
