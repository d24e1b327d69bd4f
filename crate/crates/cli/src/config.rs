//! TOML run configuration. Every section is optional and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use bespoke_core::fields::{GaussianMixture, GmmField};
use bespoke_core::scheme::BaseKind;
use bespoke_core::schedulers::Scheduler;
use bespoke_core::solvers::StepKind;
use bespoke_core::training::{GradEngine, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub testbed: TestbedConfig,
    pub solver: SolverConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub order: OrderConfig,
    pub equiv: EquivConfig,
    pub io: IoConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Circle,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestbedConfig {
    pub scheduler: String,
    pub vp_b_max: Option<f64>,
    pub vp_b_min: Option<f64>,
    pub dim: usize,
    pub components: usize,
    pub layout: Layout,
    /// Circle radius.
    pub radius: f64,
    /// Half-width of the box random means are drawn from.
    pub spread: f64,
    pub variance: f64,
    /// Seed for the random layout.
    pub seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            scheduler: "ot".into(),
            vp_b_max: None,
            vp_b_min: None,
            dim: 2,
            components: 5,
            layout: Layout::Circle,
            radius: 3.0,
            spread: 3.0,
            variance: 0.09,
            seed: 0,
        }
    }
}

impl TestbedConfig {
    pub fn scheduler(&self) -> Result<Scheduler, CliError> {
        Scheduler::from_name(&self.scheduler, self.vp_b_max, self.vp_b_min).map_err(config_err)
    }

    pub fn mixture(&self) -> Result<GaussianMixture, CliError> {
        if !(self.variance > 0.0) {
            return Err(CliError::Config(format!("testbed.variance must be positive, got {}", self.variance)));
        }
        match self.layout {
            Layout::Circle => GaussianMixture::circle(self.dim, self.components, self.radius, self.variance),
            Layout::Random => GaussianMixture::random(self.dim, self.components, self.spread, self.variance, self.seed),
        }
        .map_err(config_err)
    }

    pub fn field(&self) -> Result<GmmField, CliError> {
        Ok(GmmField::new(self.scheduler()?.shared(), self.mixture()?))
    }

    /// Stable description used in cache keys.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("testbed config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub base_kind: BaseKind,
    pub n: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { base_kind: BaseKind::Rk2, n: 5 }
    }
}

/// Training fields; the step count and base kind come from `[solver]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l_tau: f64,
    pub seed: u64,
    pub grad_engine: GradEngine,
    pub fd_epsilon: f64,
    pub fresh_batch_every: usize,
    pub validation_size: usize,
    pub validation_every: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            iterations: d.iterations,
            learning_rate: d.learning_rate,
            l_tau: d.l_tau,
            seed: d.seed,
            grad_engine: d.grad_engine,
            fd_epsilon: d.fd_epsilon,
            fresh_batch_every: d.fresh_batch_every,
            validation_size: d.validation_size,
            validation_every: d.validation_every,
            rtol: d.rtol,
            atol: d.atol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub nfe_grid: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Plain solvers (`rk1`, `rk2`, `rk4`) and identity schemes
    /// (`identity-rk1`, `identity-rk2`).
    pub baselines: Vec<String>,
    /// Trained scheme files, one per NFE of the grid.
    pub schemes: Vec<PathBuf>,
    pub label: String,
    pub rtol: f64,
    pub atol: f64,
    pub peak: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nfe_grid: vec![10, 16, 20],
            batch_size: 256,
            seed: 0,
            baselines: vec!["rk1".into(), "rk2".into()],
            schemes: Vec::new(),
            label: "bespoke".into(),
            rtol: 1e-9,
            atol: 1e-9,
            peak: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderTarget {
    #[default]
    Base,
    Bespoke,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderConfig {
    pub target: OrderTarget,
    /// `rk1`, `rk2` or `rk4` (`rk4` only for the base target).
    pub kind: String,
    /// Step sizes are `1 / n` for each entry.
    pub n_grid: Vec<usize>,
    /// Launch times (base) or launch parameters `r` (bespoke).
    pub anchors: Vec<f64>,
    pub paths: usize,
    /// Random schemes for the bespoke target.
    pub schemes: usize,
    pub seed: u64,
    /// Defaults to the expected local order plus or minus 0.3.
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
}

impl Default for OrderConfig {
    fn default() -> Self {
        Self {
            target: OrderTarget::Base,
            kind: "rk2".into(),
            n_grid: vec![10, 20, 40, 80],
            anchors: vec![0.1, 0.3, 0.5, 0.7],
            paths: 4,
            schemes: 10,
            seed: 0,
            slope_min: None,
            slope_max: None,
        }
    }
}

impl OrderConfig {
    pub fn step_kind(&self) -> Result<StepKind, CliError> {
        StepKind::from_name(&self.kind).map_err(config_err)
    }

    /// Expected local order: one more than the global order.
    pub fn expected_slope(&self) -> Result<f64, CliError> {
        Ok(self.step_kind()?.order() as f64 + 1.0)
    }

    pub fn band(&self) -> Result<(f64, f64), CliError> {
        let e = self.expected_slope()?;
        Ok((self.slope_min.unwrap_or(e - 0.3), self.slope_max.unwrap_or(e + 0.3)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivConfig {
    pub a: String,
    pub b: String,
    pub vp_b_max: Option<f64>,
    pub vp_b_min: Option<f64>,
    pub batch: usize,
    pub seed: u64,
    pub rtol: f64,
    pub atol: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub r_points: usize,
    pub field_points: usize,
    pub max_path_residual: f64,
    pub max_field_rel_error: f64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        Self {
            a: "ot".into(),
            b: "cosine".into(),
            vp_b_max: None,
            vp_b_min: None,
            batch: 16,
            seed: 0,
            rtol: 1e-9,
            atol: 1e-9,
            r_lo: 0.02,
            r_hi: 0.98,
            r_points: 97,
            field_points: 200,
            max_path_residual: 1e-5,
            max_field_rel_error: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

pub(crate) fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(config_err)
    }

    /// Read and validate. Relative scheme paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.eval.schemes {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.testbed.field()?;
        self.train_config().validate().map_err(config_err)?;
        if self.eval.nfe_grid.is_empty() || self.eval.nfe_grid.contains(&0) {
            return Err(CliError::Config("eval.nfe_grid must list positive NFE values".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(CliError::Config("eval.batch_size must be at least 1".into()));
        }
        for b in &self.eval.baselines {
            parse_baseline(b)?;
        }
        for p in &self.eval.schemes {
            if !p.is_file() {
                return Err(CliError::Config(format!("scheme file {} does not exist", p.display())));
            }
        }
        let kind = self.order.step_kind()?;
        if self.order.target == OrderTarget::Bespoke && kind == StepKind::Rk4 {
            return Err(CliError::Config("bespoke order checks support rk1 and rk2 only".into()));
        }
        if self.order.n_grid.len() < 3 || self.order.n_grid.contains(&0) {
            return Err(CliError::Config("order.n_grid needs at least 3 positive entries".into()));
        }
        let h_max = 1.0 / *self.order.n_grid.iter().min().expect("non-empty") as f64;
        if self.order.anchors.is_empty() || self.order.anchors.iter().any(|&a| !(a >= 0.0 && a + h_max <= 1.0)) {
            return Err(CliError::Config("order.anchors must lie in [0, 1 - h_max]".into()));
        }
        if self.order.paths == 0 || (self.order.target == OrderTarget::Bespoke && self.order.schemes == 0) {
            return Err(CliError::Config("order.paths and order.schemes must be positive".into()));
        }
        self.equiv_schedulers()?;
        if self.equiv.batch == 0 {
            return Err(CliError::Config("equiv.batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            n: self.solver.n,
            base_kind: self.solver.base_kind,
            batch_size: t.batch_size,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            l_tau: t.l_tau,
            seed: t.seed,
            grad_engine: t.grad_engine,
            fd_epsilon: t.fd_epsilon,
            fresh_batch_every: t.fresh_batch_every,
            validation_size: t.validation_size,
            validation_every: t.validation_every,
            rtol: t.rtol,
            atol: t.atol,
        }
    }

    pub fn equiv_schedulers(&self) -> Result<(Scheduler, Scheduler), CliError> {
        let e = &self.equiv;
        Ok((
            Scheduler::from_name(&e.a, e.vp_b_max, e.vp_b_min).map_err(config_err)?,
            Scheduler::from_name(&e.b, e.vp_b_max, e.vp_b_min).map_err(config_err)?,
        ))
    }

    /// Apply a command-line seed to every seeded section.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.eval.seed = seed;
        self.order.seed = seed;
        self.equiv.seed = seed;
    }
}

/// A baseline entry of the eval section.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Plain(StepKind),
    Identity(BaseKind),
}

pub fn parse_baseline(name: &str) -> Result<Baseline, CliError> {
    if let Some(rest) = name.strip_prefix("identity-") {
        return BaseKind::from_name(rest)
            .map(Baseline::Identity)
            .map_err(|_| CliError::Config(format!("unknown baseline '{name}'")));
    }
    StepKind::from_name(name)
        .map(Baseline::Plain)
        .map_err(|_| CliError::Config(format!("unknown baseline '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[train]\nbatchsize = 3\n").is_err());
        assert!(RunConfig::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::parse(
            "[solver]\nbase_kind = \"rk1\"\nn = 8\n[train]\niterations = 3\ngrad_engine = \"central-fd\"\n[testbed]\nscheduler = \"vp\"\n",
        )
        .unwrap();
        let t = cfg.train_config();
        assert_eq!((t.n, t.base_kind, t.iterations), (8, BaseKind::Rk1, 3));
        assert_eq!(t.grad_engine, GradEngine::CentralFd);
        assert!(matches!(cfg.testbed.scheduler().unwrap(), Scheduler::Vp { .. }));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let bad = |s: &str| RunConfig::parse(s).and_then(|c| c.validate()).is_err();
        assert!(bad("[train]\nlearning_rate = -1.0\n"));
        assert!(bad("[testbed]\nscheduler = \"linear\"\n"));
        assert!(bad("[eval]\nbaselines = [\"rk7\"]\n"));
        assert!(bad("[eval]\nschemes = [\"/definitely/missing.json\"]\n"));
        assert!(bad("[order]\ntarget = \"bespoke\"\nkind = \"rk4\"\n"));
    }

    #[test]
    fn order_band_defaults_follow_kind() {
        let mut o = OrderConfig::default();
        assert_eq!(o.band().unwrap(), (2.7, 3.3));
        o.kind = "rk1".into();
        let (lo, hi) = o.band().unwrap();
        assert!((lo - 1.7).abs() < 1e-12 && (hi - 2.3).abs() < 1e-12);
    }

    #[test]
    fn baselines() {
        assert_eq!(parse_baseline("rk4").unwrap(), Baseline::Plain(StepKind::Rk4));
        assert_eq!(parse_baseline("identity-rk2").unwrap(), Baseline::Identity(BaseKind::Rk2));
        assert!(parse_baseline("identity-rk4").is_err());
    }
}
