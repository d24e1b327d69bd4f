use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};
use crate::fields::VelocityField;
use crate::json::fmt_f64;
use crate::scheme::{bespoke_sample, BaseKind, SchemeGrids};
use crate::solvers::{solve_fixed, StepKind};
use crate::vector::rms_distance;

use super::{default_peak, psnr, EquivalenceReport, OrderFit};

/// A sampler compared in a sweep.
#[derive(Clone, Debug)]
pub enum SolverSpec {
    Plain(StepKind),
    /// Identity bespoke scheme of the given base, at any step count.
    Identity(BaseKind),
    /// Trained schemes; one is needed for every step count in the sweep.
    Bespoke { label: String, schemes: Vec<SchemeGrids> },
}

impl SolverSpec {
    pub fn label(&self) -> String {
        match self {
            SolverSpec::Plain(k) => k.name().to_string(),
            SolverSpec::Identity(b) => format!("identity-{}", b.name()),
            SolverSpec::Bespoke { label, .. } => label.clone(),
        }
    }

    pub fn evals_per_step(&self) -> usize {
        match self {
            SolverSpec::Plain(k) => k.evals_per_step(),
            SolverSpec::Identity(b) => b.evals_per_step(),
            SolverSpec::Bespoke { schemes, .. } => schemes.first().map_or(2, |g| g.base_kind.evals_per_step()),
        }
    }

    fn sampler(&self, steps: usize) -> Result<Sampler> {
        match self {
            SolverSpec::Plain(k) => Ok(Sampler::Plain(*k, steps)),
            SolverSpec::Identity(b) => Ok(Sampler::Bespoke(SchemeGrids::identity(*b, steps)?)),
            SolverSpec::Bespoke { label, schemes } => schemes
                .iter()
                .find(|g| g.n == steps)
                .cloned()
                .map(Sampler::Bespoke)
                .ok_or_else(|| BespokeError::InvalidParameter(format!("solver '{label}' has no scheme with {steps} steps"))),
        }
    }
}

enum Sampler {
    Plain(StepKind, usize),
    Bespoke(SchemeGrids),
}

impl Sampler {
    fn run<F: VelocityField + ?Sized>(&self, f: &F, x0: &[f64]) -> Result<Vec<f64>> {
        match self {
            Sampler::Plain(k, n) => Ok(solve_fixed(f, *k, *n, x0)?.into_final_state()),
            Sampler::Bespoke(g) => bespoke_sample(g, f, x0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub solver: String,
    pub nfe: usize,
    pub steps: usize,
    pub rmse: f64,
    pub psnr: f64,
    pub wall_clock_s: f64,
    pub per_sample_errors: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub peak: f64,
    pub rows: Vec<SweepRow>,
    pub order_fits: Vec<(String, OrderFit)>,
    pub equivalence: Vec<EquivalenceReport>,
    /// Measured Lipschitz constant of the field, next to the `L_τ` used.
    pub lipschitz_estimate: Option<f64>,
    pub l_tau: Option<f64>,
}

impl EvalReport {
    pub fn row(&self, solver: &str, nfe: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.solver == solver && r.nfe == nfe)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "solver,nfe,steps,rmse,psnr,wall_clock_s")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.solver,
                r.nfe,
                r.steps,
                fmt_f64(r.rmse),
                fmt_f64(r.psnr),
                fmt_f64(r.wall_clock_s)
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

/// RMSE and PSNR of every solver at every NFE against `reference`
/// endpoints. `peak` defaults to [`default_peak`] of the reference.
pub fn sweep<F: VelocityField + ?Sized>(
    f: &F,
    solvers: &[SolverSpec],
    nfe_grid: &[usize],
    x0_batch: &[Vec<f64>],
    reference: &[Vec<f64>],
    peak: Option<f64>,
) -> Result<EvalReport> {
    if x0_batch.is_empty() || x0_batch.len() != reference.len() {
        return Err(BespokeError::InvalidParameter("sweep needs equal, non-empty x0 and reference batches".into()));
    }
    let peak = peak.unwrap_or_else(|| default_peak(reference));
    let mut rows = Vec::with_capacity(solvers.len() * nfe_grid.len());
    for spec in solvers {
        let per = spec.evals_per_step();
        for &nfe in nfe_grid {
            if nfe == 0 || nfe % per != 0 {
                return Err(BespokeError::InvalidParameter(format!(
                    "NFE {nfe} is not a positive multiple of {per} for solver '{}'",
                    spec.label()
                )));
            }
            let steps = nfe / per;
            let sampler = spec.sampler(steps)?;
            let start = Instant::now();
            let out: Vec<Vec<f64>> = x0_batch.par_iter().map(|x0| sampler.run(f, x0)).collect::<Result<_>>()?;
            let wall_clock_s = start.elapsed().as_secs_f64();
            let per_sample_errors: Vec<f64> = out.iter().zip(reference).map(|(a, b)| rms_distance(b, a)).collect();
            rows.push(SweepRow {
                solver: spec.label(),
                nfe,
                steps,
                rmse: per_sample_errors.iter().sum::<f64>() / per_sample_errors.len() as f64,
                psnr: psnr(reference, &out, peak)?,
                wall_clock_s,
                per_sample_errors,
            });
        }
    }
    Ok(EvalReport { peak, rows, ..EvalReport::default() })
}
