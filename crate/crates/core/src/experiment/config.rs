use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ArdShape, PoissonShape, SplitSpec};
use crate::diagnostics::SweepOptions;
use crate::error::{Error, Result};
use crate::eval::{AisConfig, PosteriorLpdConfig};
use crate::mcmc::KernelConfig;
use crate::models::PkForm;
use crate::par::Execution;
use crate::saem::{GammaSchedule, SaemConfig};

/// One experiment, read from a TOML file.
///
/// Every optional field is filled by [`ExperimentConfig::with_defaults`]
/// from the protocol of the chosen experiment; the filled config is what
/// gets hashed and echoed into the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    pub n_replicates: Option<usize>,
    /// Output directory, relative to the output root.
    pub output_dir: Option<PathBuf>,
    /// Worker threads for replicate fan-out; all cores when unset.
    pub threads: Option<usize>,
    pub experiment: Experiment,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub saem: SaemSection,
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    SyntheticLogistic(SyntheticLogisticSpec),
    Theophylline(TheophyllineSpec),
    PoissonGlm(GlmSpec),
    ArdLogistic(GlmSpec),
    OracleBiasSweep(OracleSweepSpec),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::SyntheticLogistic(_) => "synthetic-logistic",
            Experiment::Theophylline(_) => "theophylline",
            Experiment::PoissonGlm(_) => "poisson-glm",
            Experiment::ArdLogistic(_) => "ard-logistic",
            Experiment::OracleBiasSweep(_) => "oracle-bias-sweep",
        }
    }
}

/// Logistic regression on a generated design with condition number `kappa`.
/// Each replicate draws its own dataset from its replicate seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogisticSpec {
    #[serde(default = "defaults::n_logistic")]
    pub n: usize,
    #[serde(default = "defaults::d_logistic")]
    pub d: usize,
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    /// Largest singular value of the design.
    #[serde(default = "defaults::design_scale")]
    pub design_scale: f64,
    /// `(μ, σ)` used to draw the coefficients.
    #[serde(default = "defaults::theta_true_logistic")]
    pub theta_true: Vec<f64>,
    /// `(μ, σ)`.
    #[serde(default = "defaults::theta0_logistic")]
    pub theta0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheophyllineSpec {
    /// CSV with columns `patient,dose,time,concentration`; the bundled data when unset.
    pub data: Option<PathBuf>,
    #[serde(default = "defaults::yes")]
    pub exclude_time_zero: bool,
    #[serde(default)]
    pub pk_form: PkForm,
    /// `(μ_ka, μ_V, μ_Cl, σ_ka, σ_V, σ_Cl, σ)`.
    #[serde(default = "defaults::theta0_theophylline")]
    pub theta0: Vec<f64>,
}

/// A regression experiment on a CSV file or on a generated stand-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub data: DataSource,
    /// Natural parameters; the experiment default when unset.
    pub theta0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// A CSV file read with a schema descriptor (both relative to the config file).
    Csv { path: PathBuf, schema: PathBuf },
    /// Generated data with the shape of a named dataset or an explicit `n × d`.
    Synthetic {
        shape: Option<String>,
        n: Option<usize>,
        d: Option<usize>,
        /// ARD only: number of nonzero coefficients (half of `d` when unset).
        n_active: Option<usize>,
    },
}

/// The conjugate-Gaussian oracle swept over η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSweepSpec {
    #[serde(default = "defaults::oracle_groups")]
    pub n_groups: usize,
    #[serde(default = "defaults::oracle_obs")]
    pub obs_per_group: usize,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "defaults::oracle_tau2")]
    pub tau2: f64,
    /// `(μ, τ²)`.
    #[serde(default = "defaults::theta0_oracle")]
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub sweep: SweepOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Ula,
    Mala,
}

impl KernelKind {
    pub fn config(self, eta: f64) -> KernelConfig {
        match self {
            KernelKind::Ula => KernelConfig::ula(eta),
            KernelKind::Mala => KernelConfig::mala(eta),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Ula => "ula",
            KernelKind::Mala => "mala",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelSection {
    pub kinds: Option<Vec<KernelKind>>,
    /// Langevin stepsizes; every kind runs at every η.
    pub etas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaemSection {
    pub n_iterations: Option<usize>,
    pub initial_burn_in: Option<usize>,
    pub mcmc_steps_per_iter: Option<usize>,
    pub gamma_schedule: Option<GammaSchedule>,
    pub tolerance: Option<f64>,
    pub execution: Option<Execution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EvalMethod {
    None,
    /// Annealed importance sampling of each held-out unit's marginal.
    Ais(AisConfig),
    /// Posterior draws from adapted MALA, averaged over held-out rows.
    Posterior(PosteriorLpdConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub lpd: Option<EvalMethod>,
    pub bootstrap_level: Option<f64>,
    pub bootstrap_resamples: Option<usize>,
}

mod defaults {
    pub fn yes() -> bool {
        true
    }
    pub fn n_logistic() -> usize {
        1000
    }
    pub fn d_logistic() -> usize {
        100
    }
    pub fn kappa() -> f64 {
        1000.0
    }
    pub fn design_scale() -> f64 {
        100.0
    }
    pub fn theta_true_logistic() -> Vec<f64> {
        vec![1.0, 0.1]
    }
    pub fn theta0_logistic() -> Vec<f64> {
        vec![0.0, 1.0]
    }
    pub fn theta0_theophylline() -> Vec<f64> {
        vec![-1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
    }
    pub fn oracle_groups() -> usize {
        1000
    }
    pub fn oracle_obs() -> usize {
        10
    }
    pub fn oracle_tau2() -> f64 {
        0.12
    }
    pub fn theta0_oracle() -> Vec<f64> {
        vec![0.0, 1.0]
    }
}

/// A config file after parsing, with the keys serde did not consume.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Directory that relative data paths are resolved against.
    pub base_dir: PathBuf,
    /// Dotted paths of keys present in the file but not part of the format.
    pub unknown_fields: Vec<String>,
}

pub fn parse_config(text: &str, base_dir: impl Into<PathBuf>) -> Result<LoadedConfig> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let echoed = toml::Table::try_from(&config).map_err(|e| Error::Config(e.to_string()))?;
    let mut unknown_fields = Vec::new();
    diff_keys(&raw, &echoed, "", &mut unknown_fields);
    Ok(LoadedConfig { config, base_dir: base_dir.into(), unknown_fields })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, base).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn diff_keys(raw: &toml::Table, echoed: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in raw {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, echoed.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(r), Some(toml::Value::Table(e))) => diff_keys(r, e, &path, out),
            _ => {}
        }
    }
}

impl ExperimentConfig {
    /// Fills every unset field from the experiment's protocol.
    pub fn with_defaults(mut self) -> Self {
        let name = self.experiment.name();
        let (iters, burn, etas, kinds, split, lpd): (usize, usize, Vec<f64>, Vec<KernelKind>, Option<SplitSpec>, EvalMethod) =
            match &self.experiment {
                Experiment::SyntheticLogistic(_) => {
                    (100, 10, vec![5e-3], vec![KernelKind::Ula, KernelKind::Mala], None, EvalMethod::None)
                }
                Experiment::Theophylline(_) => (
                    1000,
                    100,
                    vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
                    vec![KernelKind::Ula, KernelKind::Mala],
                    Some(SplitSpec::new(9, 3)),
                    EvalMethod::Ais(AisConfig::default()),
                ),
                Experiment::PoissonGlm(_) => (
                    100,
                    10,
                    vec![1e-3, 1e-2, 1e-1, 1.0],
                    vec![KernelKind::Ula, KernelKind::Mala],
                    Some(SplitSpec::new(8, 1)),
                    EvalMethod::Ais(AisConfig::default()),
                ),
                Experiment::ArdLogistic(_) => (
                    2000,
                    100,
                    vec![1e-3, 1e-2, 1e-1],
                    vec![KernelKind::Ula, KernelKind::Mala],
                    Some(SplitSpec::new(8, 1)),
                    EvalMethod::Posterior(PosteriorLpdConfig::default()),
                ),
                Experiment::OracleBiasSweep(_) => {
                    (2000, 100, vec![1e-3, 1e-2, 1e-1], vec![KernelKind::Ula], None, EvalMethod::None)
                }
            };
        let n_replicates = match self.experiment {
            Experiment::SyntheticLogistic(_) => 5,
            Experiment::OracleBiasSweep(_) => 1,
            _ => 32,
        };
        self.n_replicates.get_or_insert(n_replicates);
        self.output_dir.get_or_insert_with(|| PathBuf::from(name));
        self.kernel.kinds.get_or_insert(kinds);
        self.kernel.etas.get_or_insert(etas);
        let s = &mut self.saem;
        s.n_iterations.get_or_insert(iters);
        s.initial_burn_in.get_or_insert(burn);
        s.mcmc_steps_per_iter.get_or_insert(4);
        s.gamma_schedule.get_or_insert_with(GammaSchedule::default);
        s.execution.get_or_insert_with(Execution::default);
        if self.split.is_none() {
            self.split = split;
        }
        self.eval.lpd.get_or_insert(lpd);
        self.eval.bootstrap_level.get_or_insert(0.8);
        self.eval.bootstrap_resamples.get_or_insert(10_000);
        self
    }

    pub fn n_replicates(&self) -> usize {
        self.n_replicates.unwrap_or(1)
    }

    pub fn kinds(&self) -> &[KernelKind] {
        self.kernel.kinds.as_deref().unwrap_or_default()
    }

    pub fn etas(&self) -> &[f64] {
        self.kernel.etas.as_deref().unwrap_or_default()
    }

    /// SAEM settings for one kernel at one η. Call on a defaulted config.
    pub fn saem_config(&self, kind: KernelKind, eta: f64) -> SaemConfig {
        let s = &self.saem;
        let mut cfg = SaemConfig::new(s.n_iterations.unwrap_or(1), kind.config(eta), self.seed);
        cfg.initial_burn_in = s.initial_burn_in.unwrap_or(0);
        cfg.mcmc_steps_per_iter = s.mcmc_steps_per_iter.unwrap_or(4);
        cfg.gamma_schedule = s.gamma_schedule.unwrap_or_default();
        cfg.tolerance = s.tolerance;
        cfg.execution = s.execution.unwrap_or_default();
        cfg
    }

    /// The defaulted config as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Constraint violations of a defaulted config, each naming its field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_replicates() == 0 {
            v.push("n_replicates: must be at least 1".into());
        }
        if self.threads == Some(0) {
            v.push("threads: must be at least 1".into());
        }
        if self.kinds().is_empty() {
            v.push("kernel.kinds: at least one kernel is required".into());
        }
        if self.etas().is_empty() {
            v.push("kernel.etas: at least one η is required".into());
        }
        for (i, &eta) in self.etas().iter().enumerate() {
            if !(eta > 0.0 && eta.is_finite()) {
                v.push(format!("kernel.etas[{i}]: η must be positive and finite, got {eta}"));
            }
        }
        let s = &self.saem;
        if s.n_iterations == Some(0) {
            v.push("saem.n_iterations: must be at least 1".into());
        }
        if s.mcmc_steps_per_iter == Some(0) {
            v.push("saem.mcmc_steps_per_iter: must be at least 1".into());
        }
        if let Some(t) = s.tolerance {
            if !(t > 0.0) {
                v.push(format!("saem.tolerance: must be positive, got {t}"));
            }
        }
        if let (Some(g), Some(n)) = (s.gamma_schedule, s.n_iterations) {
            if let Err(e) = g.validate(n) {
                v.push(format!("saem.gamma_schedule: {}", strip(e)));
            }
        }
        if let Some(sp) = &self.split {
            if sp.train == 0 || sp.test == 0 {
                v.push(format!("split: both parts of {}:{} must be positive", sp.train, sp.test));
            }
        }
        match self.eval.lpd.as_ref() {
            Some(EvalMethod::Ais(a)) => {
                if let Err(e) = a.validate() {
                    v.push(format!("eval.lpd: {}", strip(e)));
                }
            }
            Some(EvalMethod::Posterior(p)) => {
                if p.n_samples == 0 {
                    v.push("eval.lpd.n_samples: must be at least 1".into());
                }
                if !(p.initial_eta > 0.0) {
                    v.push(format!("eval.lpd.initial_eta: must be positive, got {}", p.initial_eta));
                }
                if !(p.target_accept > 0.0 && p.target_accept < 1.0) {
                    v.push(format!("eval.lpd.target_accept: must lie in (0, 1), got {}", p.target_accept));
                }
            }
            _ => {}
        }
        if let Some(l) = self.eval.bootstrap_level {
            if !(l > 0.0 && l < 1.0) {
                v.push(format!("eval.bootstrap_level: must lie in (0, 1), got {l}"));
            }
        }
        if self.eval.bootstrap_resamples == Some(0) {
            v.push("eval.bootstrap_resamples: must be at least 1".into());
        }
        let needs_split = matches!(
            self.experiment,
            Experiment::Theophylline(_) | Experiment::PoissonGlm(_) | Experiment::ArdLogistic(_)
        );
        if needs_split && self.split.is_none() {
            v.push("split: required for this experiment".into());
        }
        if !needs_split && !matches!(self.eval.lpd, None | Some(EvalMethod::None)) {
            v.push(format!("eval.lpd: {} has no held-out data to evaluate", self.experiment.name()));
        }
        self.experiment_violations(&mut v);
        v
    }

    /// Data files the config refers to that do not exist.
    pub fn missing_files(&self, base_dir: &Path) -> Vec<String> {
        let mut v = Vec::new();
        match &self.experiment {
            Experiment::Theophylline(TheophyllineSpec { data: Some(p), .. }) => {
                file_exists(&mut v, "experiment.data", &base_dir.join(p))
            }
            Experiment::PoissonGlm(g) | Experiment::ArdLogistic(g) => {
                if let DataSource::Csv { path, schema } = &g.data {
                    file_exists(&mut v, "experiment.data.path", &base_dir.join(path));
                    file_exists(&mut v, "experiment.data.schema", &base_dir.join(schema));
                }
            }
            _ => {}
        }
        v
    }

    fn experiment_violations(&self, v: &mut Vec<String>) {
        let positive = |v: &mut Vec<String>, field: &str, x: f64| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{field}: must be positive, got {x}"));
            }
        };
        let theta_len = |v: &mut Vec<String>, theta: &[f64], len: usize| {
            if theta.len() != len {
                v.push(format!("experiment.theta0: expected {len} values, got {}", theta.len()));
                false
            } else {
                true
            }
        };
        match &self.experiment {
            Experiment::SyntheticLogistic(e) => {
                if e.d < 2 || e.n < e.d {
                    v.push(format!("experiment: need n ≥ d ≥ 2, got n = {}, d = {}", e.n, e.d));
                }
                if !(e.kappa >= 1.0) {
                    v.push(format!("experiment.kappa: must be at least 1, got {}", e.kappa));
                }
                positive(v, "experiment.design_scale", e.design_scale);
                if e.theta_true.len() != 2 {
                    v.push(format!("experiment.theta_true: expected 2 values, got {}", e.theta_true.len()));
                } else {
                    positive(v, "experiment.theta_true[1]", e.theta_true[1]);
                }
                if theta_len(v, &e.theta0, 2) {
                    positive(v, "experiment.theta0[1]", e.theta0[1]);
                }
            }
            Experiment::Theophylline(e) => {
                if theta_len(v, &e.theta0, 7) {
                    for i in 3..7 {
                        positive(v, &format!("experiment.theta0[{i}]"), e.theta0[i]);
                    }
                }
            }
            Experiment::PoissonGlm(g) | Experiment::ArdLogistic(g) => {
                let ard = matches!(self.experiment, Experiment::ArdLogistic(_));
                match &g.data {
                    DataSource::Csv { .. } => {}
                    DataSource::Synthetic { shape, n, d, n_active } => {
                        if let Some(name) = shape {
                            let known = if ard { ArdShape::named(name).is_some() } else { PoissonShape::named(name).is_some() };
                            if !known {
                                v.push(format!("experiment.data.shape: unknown dataset `{name}`"));
                            }
                        } else if n.is_none() || d.is_none() {
                            v.push("experiment.data: synthetic data needs `shape` or both `n` and `d`".into());
                        }
                        if let (Some(k), Some(d)) = (n_active, d) {
                            if k > d {
                                v.push(format!("experiment.data.n_active: {k} exceeds d = {d}"));
                            }
                        }
                    }
                }
                if let Some(t) = &g.theta0 {
                    if ard {
                        for (i, &x) in t.iter().enumerate() {
                            positive(v, &format!("experiment.theta0[{i}]"), x);
                        }
                    } else if let Some(&sigma) = t.last() {
                        positive(v, &format!("experiment.theta0[{}]", t.len() - 1), sigma);
                    }
                }
            }
            Experiment::OracleBiasSweep(e) => {
                if e.n_groups == 0 || e.obs_per_group == 0 {
                    v.push("experiment: n_groups and obs_per_group must be positive".into());
                }
                positive(v, "experiment.tau2", e.tau2);
                if theta_len(v, &e.theta0, 2) {
                    positive(v, "experiment.theta0[1]", e.theta0[1]);
                }
                let w = e.sweep.window;
                if !(w > 0.0 && w <= 0.5) {
                    v.push(format!("experiment.sweep.window: must lie in (0, 0.5], got {w}"));
                }
                if e.sweep.n_seeds == 0 {
                    v.push("experiment.sweep.n_seeds: must be at least 1".into());
                }
                if self.etas().windows(2).any(|w| w[1] <= w[0]) {
                    v.push("kernel.etas: must be strictly ascending for a bias sweep".into());
                }
            }
        }
    }
}

fn file_exists(v: &mut Vec<String>, field: &str, path: &Path) {
    if !path.is_file() {
        v.push(format!("{field}: file not found: {}", path.display()));
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
