use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{DataSource, EvalMethod, Experiment, ExperimentConfig, GlmSpec, KernelKind, LoadedConfig};
use crate::data::{self, gen_synthetic_ard, gen_synthetic_logistic_scaled, gen_synthetic_poisson, ArdShape, Dataset, PoissonShape, Schema};
use crate::diagnostics::{bias_floor_sweep, BiasReport};
use crate::error::{Error, Result};
use crate::eval::{ais_unit_lpds, bootstrap_ci, posterior_sample_lpd, AisConfig, LogisticPredictive};
use crate::model::Model;
use crate::models::{ArdLogisticModel, ConjugateGaussianOracle, Design, LogisticGaussianModel, PoissonLogNormalModel, TheophyllineModel};
use crate::par::{self, Execution};
use crate::rng::{self, tag};
use crate::saem::{replicate_seed, run_replicates, run_saem_from_params, write_trace_csv, ReplicateInput, SaemConfig, Trace, TraceMeta, TraceStatus};

/// Environment variable that replaces the output root (the working directory by default).
pub const OUTPUT_ROOT_ENV: &str = "SAEM_OUTPUT_ROOT";

/// Process exit code for a failed run or validation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) | Error::Cell { .. } | Error::Csv(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

/// Exit code when every replicate diverged.
pub const EXIT_ALL_DIVERGED: i32 = 3;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `kernel.etas`.
    pub etas: Option<Vec<f64>>,
    /// Write `sweep.csv` even for a single η.
    pub sweep: bool,
    /// Output root; [`OUTPUT_ROOT_ENV`] or the working directory when unset.
    pub output_root: Option<PathBuf>,
}

/// What `validate` reports about a config file.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub unknown_fields: Vec<String>,
    pub violations: Vec<String>,
    pub missing_files: Vec<String>,
    /// The config with every default filled in.
    pub effective: ExperimentConfig,
}

impl ValidationReport {
    pub fn is_runnable(&self) -> bool {
        self.unknown_fields.is_empty() && self.violations.is_empty() && self.missing_files.is_empty()
    }
}

pub fn validate_config(loaded: &LoadedConfig, etas: Option<&[f64]>) -> ValidationReport {
    let mut cfg = loaded.config.clone();
    if let Some(e) = etas {
        cfg.kernel.etas = Some(e.to_vec());
    }
    let effective = cfg.with_defaults();
    ValidationReport {
        unknown_fields: loaded.unknown_fields.clone(),
        violations: effective.violations(),
        missing_files: effective.missing_files(&loaded.base_dir),
        effective,
    }
}

/// SHA-256 of the effective config's canonical JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// One replicate of one (kernel, η) cell.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub status: TraceStatus,
    pub iterations_completed: usize,
    pub accept_rate: f64,
    pub clamped: bool,
    pub final_theta: Vec<f64>,
    pub n_train_units: usize,
    pub n_test_units: Option<usize>,
    /// Mean held-out LPD over test units.
    pub test_lpd: Option<f64>,
    pub eval_error: Option<String>,
    #[serde(skip)]
    param_names: Vec<String>,
    #[serde(skip)]
    trace_csv: Vec<u8>,
}

impl ReplicateOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TraceStatus::Diverged { .. })
    }
}

/// All replicates of one kernel at one η.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub kernel: KernelKind,
    pub eta: f64,
    pub param_names: Vec<String>,
    pub n_replicates: usize,
    pub n_diverged: usize,
    /// Mean acceptance over non-diverged replicates.
    pub mean_accept_rate: f64,
    pub lpd_mean: Option<f64>,
    pub lpd_ci: Option<(f64, f64)>,
    pub replicates: Vec<ReplicateOutcome>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasSummary {
    pub kernel: KernelKind,
    pub report: BiasReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub meta: TraceMeta,
    pub experiment: String,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bias: Vec<BiasSummary>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn all_diverged(&self) -> bool {
        let cells = !self.cells.is_empty() && self.cells.iter().all(|c| c.n_diverged == c.n_replicates);
        let bias = !self.bias.is_empty()
            && self.bias.iter().all(|b| b.report.rows.iter().all(|r| r.per_seed.iter().all(|p| !p.is_finite())));
        cells || bias
    }
}

/// Runs every (kernel, η) cell of the experiment and writes `traces/`,
/// `summary.json` and, for η lists, `sweep.csv` under the output directory.
pub fn run_experiment(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunSummary> {
    let report = validate_config(loaded, opts.etas.as_deref());
    if !report.unknown_fields.is_empty() {
        return Err(Error::Config(format!("unknown fields: {}", report.unknown_fields.join(", "))));
    }
    if !report.violations.is_empty() {
        return Err(Error::Config(report.violations.join("; ")));
    }
    if !report.missing_files.is_empty() {
        return Err(Error::Data(report.missing_files.join("; ")));
    }
    let cfg = report.effective;
    let meta = TraceMeta { config_hash: config_hash(&cfg)?, seed: cfg.seed, version: env!("CARGO_PKG_VERSION").to_string() };
    let out_dir = output_dir(&cfg, opts.output_root.clone());
    let ctx = Context { cfg: &cfg, meta: &meta, base_dir: &loaded.base_dir };
    let (cells, bias) = with_pool(cfg.threads, || ctx.run())??;

    fs::create_dir_all(&out_dir)?;
    let summary = RunSummary { meta, experiment: cfg.experiment.name().into(), config: cfg.clone(), cells, bias, out_dir };
    write_outputs(&summary, opts.sweep || cfg.etas().len() > 1)?;
    Ok(summary)
}

fn output_dir(cfg: &ExperimentConfig, root: Option<PathBuf>) -> PathBuf {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| cfg.experiment.name().into());
    match root.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from)) {
        Some(root) if dir.is_absolute() => root.join(dir.file_name().unwrap_or_default()),
        Some(root) => root.join(dir),
        None => dir,
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = threads;
    Ok(f())
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    meta: &'a TraceMeta,
    base_dir: &'a Path,
}

impl Context<'_> {
    fn run(&self) -> Result<(Vec<CellSummary>, Vec<BiasSummary>)> {
        match &self.cfg.experiment {
            Experiment::OracleBiasSweep(spec) => {
                let oracle = ConjugateGaussianOracle::synthetic(
                    spec.n_groups,
                    spec.obs_per_group,
                    spec.mu,
                    spec.tau2,
                    rng::derive_seed(self.cfg.seed, tag::DATA),
                )?;
                let theta0 = oracle.chart_params(&spec.theta0)?;
                let mut etas = self.cfg.etas().to_vec();
                etas.sort_by(f64::total_cmp);
                let bias = self
                    .cfg
                    .kinds()
                    .iter()
                    .map(|&kind| {
                        let template = self.cfg.saem_config(kind, etas[0]);
                        let report = bias_floor_sweep(&oracle, &theta0, &etas, &template, &spec.sweep)?;
                        Ok(BiasSummary { kernel: kind, report })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((Vec::new(), bias))
            }
            _ => {
                let data = self.load_data()?;
                let mut cells = Vec::new();
                for &kind in self.cfg.kinds() {
                    for &eta in self.cfg.etas() {
                        let saem = self.cfg.saem_config(kind, eta);
                        let replicates = self.run_cell(data.as_ref(), &saem)?;
                        cells.push(self.summarize(kind, eta, replicates)?);
                    }
                }
                Ok((cells, Vec::new()))
            }
        }
    }

    /// Shared dataset for split-based experiments; `None` when each replicate generates its own.
    fn load_data(&self) -> Result<Option<Dataset>> {
        let glm = |g: &GlmSpec, ard: bool| -> Result<Dataset> {
            let seed = rng::derive_seed(self.cfg.seed, tag::DATA);
            match &g.data {
                DataSource::Csv { path, schema } => {
                    let schema = data::load_schema(self.base_dir.join(schema))?;
                    if matches!(schema, Schema::Theophylline { .. }) {
                        return Err(Error::Data("a regression experiment needs a GLM schema".into()));
                    }
                    data::load_csv(self.base_dir.join(path), &schema)
                }
                DataSource::Synthetic { shape, n, d, n_active } => {
                    let (n, d) = match shape.as_deref() {
                        Some(name) if ard => ArdShape::named(name).map(|s| (s.n, s.d)),
                        Some(name) => PoissonShape::named(name).map(|s| (s.n, s.d)),
                        None => n.zip(*d),
                    }
                    .ok_or_else(|| Error::Config("experiment.data: unknown synthetic shape".into()))?;
                    if ard {
                        Ok(gen_synthetic_ard(n, d, n_active.unwrap_or(d / 2), seed)?.0)
                    } else {
                        let beta: Vec<f64> = (0..d).map(|j| if j % 2 == 0 { 0.3 } else { -0.3 }).collect();
                        gen_synthetic_poisson(n, &beta, 1.0, 0.5, seed)
                    }
                }
            }
        };
        Ok(match &self.cfg.experiment {
            Experiment::Theophylline(t) => Some(match &t.data {
                Some(p) => data::load_csv(
                    self.base_dir.join(p),
                    &Schema::Theophylline { exclude_time_zero: t.exclude_time_zero },
                )?,
                None => Dataset::Longitudinal(data::bundled_theophylline(t.exclude_time_zero)),
            }),
            Experiment::PoissonGlm(g) => Some(glm(g, false)?),
            Experiment::ArdLogistic(g) => Some(glm(g, true)?),
            Experiment::SyntheticLogistic(_) | Experiment::OracleBiasSweep(_) => None,
        })
    }

    fn run_cell(&self, data: Option<&Dataset>, saem: &SaemConfig) -> Result<Vec<ReplicateOutcome>> {
        let n = self.cfg.n_replicates();
        let results = match (&self.cfg.experiment, data) {
            (Experiment::SyntheticLogistic(spec), _) => {
                let inner = if saem.execution.is_parallel() && n > 1 { Execution::Sequential } else { saem.execution };
                par::map_range(saem.execution, n, |index| {
                    let seed = replicate_seed(self.cfg.seed, index);
                    let cfg = SaemConfig { seed, execution: inner, ..saem.clone() };
                    let g = gen_synthetic_logistic_scaled(
                        spec.n,
                        spec.d,
                        spec.kappa,
                        spec.design_scale,
                        (spec.theta_true[0], spec.theta_true[1]),
                        seed,
                    )?;
                    let model = LogisticGaussianModel::from_tabular(tabular(&g.dataset)?)?;
                    let (trace, csv) = self.fit(&model, &cfg, &spec.theta0)?;
                    Ok(outcome(&model, index, seed, trace, csv, model.n_units()))
                })
            }
            (_, Some(data)) => {
                let split = self.cfg.split.as_ref().ok_or_else(|| Error::Config("split: required".into()))?;
                run_replicates(data, split, saem, n, |input| self.replicate(input))?
            }
            (_, None) => return Err(Error::Config("experiment has no data".into())),
        };
        results.into_iter().collect()
    }

    fn replicate(&self, input: &ReplicateInput) -> Result<ReplicateOutcome> {
        let eval_seed = rng::derive_seed(input.seed, tag::EVAL);
        let method = self.cfg.eval.lpd.clone().unwrap_or(EvalMethod::None);
        let ais = |a: &AisConfig| AisConfig { execution: input.cfg.execution, ..a.clone() };
        match &self.cfg.experiment {
            Experiment::Theophylline(spec) => {
                let train = longitudinal(&input.train)?;
                let model = TheophyllineModel::new(train, spec.pk_form)?;
                let (trace, csv) = self.fit(&model, &input.cfg, &spec.theta0)?;
                let test = TheophyllineModel::new(longitudinal(&input.test)?, spec.pk_form)?;
                let mut out = outcome(&model, input.index, input.seed, trace.clone(), csv, train.patients.len());
                out.n_test_units = Some(test.patients().len());
                if let (EvalMethod::Ais(a), false) = (&method, trace.diverged()) {
                    record_lpd(&mut out, ais_unit_lpds(&test, &trace.final_theta, &ais(a), eval_seed).map(|r| r.mean));
                }
                Ok(out)
            }
            Experiment::PoissonGlm(spec) => {
                let model = PoissonLogNormalModel::from_tabular(tabular(&input.train)?)?;
                let theta0 = spec.theta0.clone().unwrap_or_else(|| {
                    let mut t = vec![0.0; model.n_coefficients()];
                    t.push(1.0);
                    t
                });
                let (trace, csv) = self.fit(&model, &input.cfg, &theta0)?;
                let test = PoissonLogNormalModel::from_tabular(tabular(&input.test)?)?;
                let mut out = outcome(&model, input.index, input.seed, trace.clone(), csv, model.n_units());
                out.n_test_units = Some(test.n_units());
                if let (EvalMethod::Ais(a), false) = (&method, trace.diverged()) {
                    record_lpd(&mut out, ais_unit_lpds(&test, &trace.final_theta, &ais(a), eval_seed).map(|r| r.mean));
                }
                Ok(out)
            }
            Experiment::ArdLogistic(spec) => {
                let train = tabular(&input.train)?;
                let model = ArdLogisticModel::from_tabular(train)?;
                let theta0 = spec.theta0.clone().unwrap_or_else(|| vec![1.0; train.n_features()]);
                let (trace, csv) = self.fit(&model, &input.cfg, &theta0)?;
                let test = tabular(&input.test)?;
                let mut out = outcome(&model, input.index, input.seed, trace.clone(), csv, train.n_rows());
                out.n_test_units = Some(test.n_rows());
                if let (EvalMethod::Posterior(p), false) = (&method, trace.diverged()) {
                    let predictive = LogisticPredictive { x: Design::from_tabular(test), y: test.y.clone(), intercept: true };
                    let lpd = posterior_sample_lpd(
                        &model,
                        &trace.final_theta,
                        &trace.final_latent,
                        &predictive,
                        p,
                        &mut rng::child(eval_seed, 0),
                        input.cfg.execution,
                    );
                    record_lpd(&mut out, lpd.map(|r| r.mean));
                }
                Ok(out)
            }
            Experiment::SyntheticLogistic(_) | Experiment::OracleBiasSweep(_) => {
                Err(Error::Config("experiment does not use splits".into()))
            }
        }
    }

    fn fit<M: Model + ?Sized>(&self, model: &M, cfg: &SaemConfig, theta0: &[f64]) -> Result<(Trace, Vec<u8>)> {
        let theta0 = model.chart_params(theta0).map_err(|e| Error::Config(format!("experiment.theta0: {e}")))?;
        let trace = run_saem_from_params(model, cfg, &theta0)?;
        let meta = TraceMeta { seed: cfg.seed, ..self.meta.clone() };
        let mut csv = Vec::new();
        write_trace_csv(model, &trace, Some(&meta), &mut csv)?;
        Ok((trace, csv))
    }

    fn summarize(&self, kernel: KernelKind, eta: f64, replicates: Vec<ReplicateOutcome>) -> Result<CellSummary> {
        let ok: Vec<&ReplicateOutcome> = replicates.iter().filter(|r| !r.diverged()).collect();
        let mean_accept_rate = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| r.accept_rate).sum::<f64>() / ok.len() as f64
        };
        let lpds: Vec<f64> = ok.iter().filter_map(|r| r.test_lpd).collect();
        let (lpd_mean, lpd_ci) = if lpds.is_empty() {
            (None, None)
        } else {
            let level = self.cfg.eval.bootstrap_level.unwrap_or(0.8);
            let resamples = self.cfg.eval.bootstrap_resamples.unwrap_or(10_000);
            let mut r = rng::child(rng::derive_seed(self.cfg.seed, tag::EVAL), eta.to_bits() ^ kernel as u64);
            (Some(lpds.iter().sum::<f64>() / lpds.len() as f64), Some(bootstrap_ci(&lpds, level, resamples, &mut r)?))
        };
        let param_names = replicates.first().map(|r| r.param_names.clone()).unwrap_or_default();
        Ok(CellSummary {
            kernel,
            eta,
            param_names,
            n_replicates: replicates.len(),
            n_diverged: replicates.len() - ok.len(),
            mean_accept_rate,
            lpd_mean,
            lpd_ci,
            replicates,
        })
    }
}

fn outcome<M: Model + ?Sized>(
    model: &M,
    index: usize,
    seed: u64,
    trace: Trace,
    trace_csv: Vec<u8>,
    n_train_units: usize,
) -> ReplicateOutcome {
    ReplicateOutcome {
        index,
        seed,
        accept_rate: trace.mean_accept_rate,
        iterations_completed: trace.iterations_completed,
        clamped: trace.any_clamped,
        final_theta: model.natural_params(&trace.final_theta),
        status: trace.status,
        n_train_units,
        n_test_units: None,
        test_lpd: None,
        eval_error: None,
        param_names: model.param_names(),
        trace_csv,
    }
}

/// A failed or non-finite evaluation is recorded, not raised: it is an outcome of the replicate.
fn record_lpd(out: &mut ReplicateOutcome, lpd: Result<f64>) {
    match lpd {
        Ok(v) if v.is_finite() => out.test_lpd = Some(v),
        Ok(v) => out.eval_error = Some(format!("non-finite test LPD {v}")),
        Err(e) => out.eval_error = Some(e.to_string()),
    }
}

fn tabular(ds: &Dataset) -> Result<&data::Tabular> {
    ds.as_tabular().ok_or_else(|| Error::Data("expected tabular data".into()))
}

fn longitudinal(ds: &Dataset) -> Result<&data::Longitudinal> {
    ds.as_longitudinal().ok_or_else(|| Error::Data("expected longitudinal data".into()))
}

fn eta_label(eta: f64) -> String {
    format!("{eta:e}")
}

fn write_outputs(summary: &RunSummary, sweep: bool) -> Result<()> {
    let dir = &summary.out_dir;
    let meta = &summary.meta;
    let header = format!("# config_hash={} seed={} version={}\n", meta.config_hash, meta.seed, meta.version);
    if !summary.cells.is_empty() {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for c in &summary.cells {
            for r in &c.replicates {
                let name = format!("{}_eta={}_rep={}.csv", c.kernel.name(), eta_label(c.eta), r.index);
                fs::write(traces.join(name), &r.trace_csv)?;
            }
        }
    }
    if sweep && !summary.cells.is_empty() {
        let mut out = header.clone().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(SWEEP_HEADER)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for c in &summary.cells {
                w.write_record([
                    c.kernel.name().to_string(),
                    c.eta.to_string(),
                    c.n_replicates.to_string(),
                    c.n_diverged.to_string(),
                    c.mean_accept_rate.to_string(),
                    opt(c.lpd_mean),
                    opt(c.lpd_ci.map(|x| x.0)),
                    opt(c.lpd_ci.map(|x| x.1)),
                ])?;
            }
            w.flush()?;
        }
        fs::write(dir.join("sweep.csv"), out)?;
    }
    for b in &summary.bias {
        let mut out = header.clone().into_bytes();
        b.report.write_csv(&mut out)?;
        fs::write(dir.join(format!("bias_{}.csv", b.kernel.name())), out)?;
    }
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

/// Columns of `sweep.csv`.
pub const SWEEP_HEADER: [&str; 8] =
    ["kernel", "eta", "n_replicates", "n_diverged", "mean_accept_rate", "lpd_mean", "lpd_ci_lower", "lpd_ci_upper"];
