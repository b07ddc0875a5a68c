//! The stochastic-approximation EM driver.
//!
//! Each iteration moves the latent state with a few warm-started Langevin
//! steps targeting `p(z | y, θ_k)`, folds `S(z)` into the running statistic
//! with a Robbins–Monro step and maps the result back to parameters with the
//! closed-form M-step.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::mcmc::{advance, KernelConfig, KernelState, LangevinTarget};
use crate::model::{mean_field_residual, norm, Latent, Model, Params, SufficientStats};
use crate::par::{self, Execution};
use crate::rng::{self, tag, Rng};

/// Robbins–Monro stepsizes `γ_k`, indexed from `k = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GammaSchedule {
    /// `γ_k = k^{−exponent}`.
    Power { exponent: f64 },
    Constant { value: f64 },
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule::Power { exponent: 0.5 }
    }
}

impl GammaSchedule {
    pub fn gamma(&self, k: usize) -> f64 {
        match *self {
            GammaSchedule::Power { exponent } => (k.max(1) as f64).powf(-exponent),
            GammaSchedule::Constant { value } => value,
        }
    }

    /// Checks `γ_k ∈ (0, 1]` and nonincreasing for `k = 1..=n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            GammaSchedule::Power { exponent } if !(exponent >= 0.0 && exponent.is_finite()) => {
                return Err(Error::Config(format!("γ exponent must be nonnegative, got {exponent}")));
            }
            GammaSchedule::Constant { value } if !(value > 0.0 && value <= 1.0) => {
                return Err(Error::Config(format!("constant γ must lie in (0, 1], got {value}")));
            }
            _ => {}
        }
        let mut prev = f64::INFINITY;
        for k in 1..=n {
            let g = self.gamma(k);
            if !(g > 0.0 && g <= 1.0) || g > prev {
                return Err(Error::Config(format!("γ_{k} = {g} breaks (0, 1] or monotonicity")));
            }
            prev = g;
        }
        Ok(())
    }
}

/// How the latent state is refreshed each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EStep {
    #[default]
    Langevin,
    /// Exact draws from the posterior, for models that provide them.
    ExactPosterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaemConfig {
    pub n_iterations: usize,
    pub mcmc_steps_per_iter: usize,
    pub initial_burn_in: usize,
    pub gamma_schedule: GammaSchedule,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub record_trace: bool,
    pub e_step: EStep,
    /// Stop once the largest parameter change in one iteration drops below this.
    pub tolerance: Option<f64>,
    pub execution: Execution,
}

impl SaemConfig {
    pub fn new(n_iterations: usize, kernel: KernelConfig, seed: u64) -> Self {
        Self {
            n_iterations,
            mcmc_steps_per_iter: 4,
            initial_burn_in: 0,
            gamma_schedule: GammaSchedule::default(),
            kernel,
            seed,
            record_trace: true,
            e_step: EStep::Langevin,
            tolerance: None,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::Config("n_iterations must be at least 1".into()));
        }
        if self.mcmc_steps_per_iter == 0 {
            return Err(Error::Config("mcmc_steps_per_iter must be at least 1".into()));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(Error::Config(format!("tolerance must be positive, got {t}")));
            }
        }
        self.gamma_schedule.validate(self.n_iterations)?;
        self.kernel.validate()
    }
}

/// `(1 − γ)·s + γ·stat`.
pub fn sa_update(s: &SufficientStats, stat: &SufficientStats, gamma: f64) -> Result<SufficientStats> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("γ must lie in [0, 1], got {gamma}")));
    }
    if s.len() != stat.len() {
        return Err(Error::Dimension { what: "sufficient statistics", expected: s.len(), got: stat.len() });
    }
    let out = SufficientStats(
        s.iter()
            .zip(stat.iter())
            .map(|(a, b)| {
                if gamma == 1.0 {
                    *b
                } else if gamma == 0.0 {
                    *a
                } else {
                    (1.0 - gamma) * a + gamma * b
                }
            })
            .collect(),
    );
    if !out.is_finite() {
        return Err(Error::NonFiniteStats { iteration: 0 });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub gamma: f64,
    pub accept_rate: f64,
    /// Chart parameters `θ_k = m_step(s_k)`.
    pub theta: Params,
    pub s: SufficientStats,
    pub h_norm: Option<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TraceStatus {
    Completed,
    Converged { iteration: usize },
    Diverged { iteration: usize, eta: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub param_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    pub theta0: Params,
    /// Last completed iterate (θ₀ and the post-burn-in statistic when none completed).
    pub final_theta: Params,
    pub final_s: SufficientStats,
    pub final_latent: Latent,
    pub iterations_completed: usize,
    pub any_clamped: bool,
    /// Mean acceptance rate over all completed iterations.
    pub mean_accept_rate: f64,
}

impl Trace {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TraceStatus::Diverged { .. })
    }
}

/// The joint density of one unit's latent block at fixed `θ`.
pub struct UnitTarget<'a, M: Model + ?Sized> {
    pub model: &'a M,
    pub unit: usize,
    pub dim: usize,
    pub theta: &'a Params,
}

impl<M: Model + ?Sized> LangevinTarget for UnitTarget<'_, M> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.model.unit_log_joint(self.unit, x, self.theta)
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.model.unit_log_joint_grad(self.unit, x, self.theta, grad)
    }
}

struct UnitChain {
    range: Range<usize>,
    state: KernelState,
    rng: Rng,
    error: Option<Error>,
}

fn unit_kernel(base: &KernelConfig, precond: Option<&[f64]>, range: &Range<usize>) -> KernelConfig {
    let mut cfg = base.clone();
    if let Some(p) = precond.or(base.preconditioner.as_deref()) {
        cfg.preconditioner = Some(p[range.clone()].to_vec());
    }
    cfg
}

/// Moves every unit's chain `n_steps` steps at `θ`. Returns the number of
/// accepted and proposed moves, or the first error in unit order.
fn e_step<M: Model + ?Sized>(
    model: &M,
    chains: &mut [UnitChain],
    theta: &Params,
    kernel: &KernelConfig,
    n_steps: usize,
    exec: Execution,
) -> Result<(u64, u64)> {
    let precond = model.preconditioner(theta);
    if let Some(p) = &precond {
        if p.len() != model.latent_dim() {
            return Err(Error::Dimension { what: "preconditioner", expected: model.latent_dim(), got: p.len() });
        }
    }
    par::for_each_mut(exec, chains, |unit, ch| {
        let cfg = unit_kernel(kernel, precond.as_deref(), &ch.range);
        let target = UnitTarget { model, unit, dim: ch.range.len(), theta };
        ch.error = advance(&mut ch.state, &target, &cfg, &mut ch.rng, n_steps, |_| {}).err();
    });
    let mut counts = (0, 0);
    for ch in chains.iter_mut() {
        if let Some(e) = ch.error.take() {
            return Err(e);
        }
        counts.0 += ch.state.accept_count;
        counts.1 += ch.state.proposal_count;
    }
    Ok(counts)
}

fn gather(chains: &[UnitChain], dim: usize) -> Latent {
    let mut z = vec![0.0; dim];
    for ch in chains {
        z[ch.range.clone()].copy_from_slice(&ch.state.position);
    }
    Latent(z)
}

fn divergence_status(err: Error, iteration: usize, fallback_eta: f64) -> std::result::Result<TraceStatus, Error> {
    match err {
        Error::Divergence { eta, .. } => Ok(TraceStatus::Diverged { iteration, eta, reason: err.to_string() }),
        Error::NonFiniteDensity(_) | Error::NonFiniteStats { .. } => {
            Ok(TraceStatus::Diverged { iteration, eta: fallback_eta, reason: err.to_string() })
        }
        other => Err(other),
    }
}

/// Runs SAEM from latent `z0` and statistic `s0`.
///
/// `θ₀ = m_step(s0)` drives `initial_burn_in` kernel steps, after which the
/// running statistic restarts at `S(z)`. Iteration `k = 1..=n` then moves `z`
/// at `θ_{k−1}`, sets `s_k = (1 − γ_k)s_{k−1} + γ_k S(z_k)` and
/// `θ_k = m_step(s_k)`. Kernel divergence ends the run with a
/// [`TraceStatus::Diverged`] trace that keeps every completed record.
pub fn run_saem<M: Model + ?Sized>(model: &M, cfg: &SaemConfig, z0: &Latent, s0: &SufficientStats) -> Result<Trace> {
    cfg.validate()?;
    if z0.len() != model.latent_dim() {
        return Err(Error::Dimension { what: "initial latent", expected: model.latent_dim(), got: z0.len() });
    }
    if s0.len() != model.stat_dim() {
        return Err(Error::Dimension { what: "initial statistics", expected: model.stat_dim(), got: s0.len() });
    }
    if !z0.is_finite() || !s0.is_finite() {
        return Err(Error::Domain("initial latent and statistics must be finite".into()));
    }
    let first = model.m_step(s0)?;
    let theta0 = first.params;
    let mut any_clamped = first.clamped;
    let dim = model.latent_dim();
    let e_seed = rng::derive_seed(cfg.seed, tag::E_STEP);
    let mut chains: Vec<UnitChain> = (0..model.n_units())
        .map(|u| {
            let range = model.unit_range(u);
            UnitChain {
                state: KernelState::new(z0[range.clone()].to_vec(), &cfg.kernel),
                range,
                rng: rng::child(e_seed, u as u64),
                error: None,
            }
        })
        .collect();
    let mut exact_rng = rng::child(cfg.seed, tag::E_STEP);

    let mut theta = theta0.clone();
    let mut trace = Trace {
        param_names: model.param_names(),
        records: Vec::new(),
        status: TraceStatus::Completed,
        theta0: theta0.clone(),
        final_theta: theta0.clone(),
        final_s: s0.clone(),
        final_latent: z0.clone(),
        iterations_completed: 0,
        any_clamped,
        mean_accept_rate: f64::NAN,
    };

    let langevin = cfg.e_step == EStep::Langevin;
    if langevin && cfg.initial_burn_in > 0 {
        if let Err(e) = e_step(model, &mut chains, &theta, &cfg.kernel, cfg.initial_burn_in, cfg.execution) {
            trace.status = divergence_status(e, 0, cfg.kernel.eta)?;
            trace.final_latent = gather(&chains, dim);
            return Ok(trace);
        }
    }
    let mut s = model.suff_stats(&gather(&chains, dim));
    if !s.is_finite() {
        trace.status = TraceStatus::Diverged {
            iteration: 0,
            eta: cfg.kernel.eta,
            reason: Error::NonFiniteStats { iteration: 0 }.to_string(),
        };
        return Ok(trace);
    }
    trace.final_s = s.clone();

    let mut counts = (0u64, 0u64);
    let mut accept_sum = 0.0;
    for k in 1..=cfg.n_iterations {
        let (z, accept_rate) = if langevin {
            match e_step(model, &mut chains, &theta, &cfg.kernel, cfg.mcmc_steps_per_iter, cfg.execution) {
                Ok(c) => {
                    let rate = if c.1 > counts.1 { (c.0 - counts.0) as f64 / (c.1 - counts.1) as f64 } else { 1.0 };
                    counts = c;
                    (gather(&chains, dim), rate)
                }
                Err(e) => {
                    let eta = chains.iter().map(|c| c.state.eta).fold(cfg.kernel.eta, f64::max);
                    trace.status = divergence_status(e, k, eta)?;
                    trace.final_latent = gather(&chains, dim);
                    break;
                }
            }
        } else {
            let z = model
                .sample_exact_posterior(&theta, &mut exact_rng)
                .ok_or(Error::Capability("exact posterior sampling"))?;
            (z, 1.0)
        };
        let gamma = cfg.gamma_schedule.gamma(k);
        s = match sa_update(&s, &model.suff_stats(&z), gamma) {
            Ok(s) => s,
            Err(Error::NonFiniteStats { .. }) => {
                trace.status = TraceStatus::Diverged {
                    iteration: k,
                    eta: cfg.kernel.eta,
                    reason: Error::NonFiniteStats { iteration: k }.to_string(),
                };
                trace.final_latent = z;
                break;
            }
            Err(e) => return Err(e),
        };
        let step = model.m_step(&s)?;
        any_clamped |= step.clamped;
        let change = step.params.iter().zip(theta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = step.params;
        accept_sum += accept_rate;
        trace.iterations_completed = k;
        trace.final_theta = theta.clone();
        trace.final_s = s.clone();
        trace.final_latent = z;
        if cfg.record_trace {
            trace.records.push(TraceRecord {
                k,
                gamma,
                accept_rate,
                theta: theta.clone(),
                s: s.clone(),
                h_norm: mean_field_residual(model, &s).ok().map(|h| norm(&h)),
                clamped: step.clamped,
            });
        }
        if cfg.tolerance.is_some_and(|tol| change < tol) {
            trace.status = TraceStatus::Converged { iteration: k };
            break;
        }
    }
    trace.any_clamped = any_clamped;
    if trace.iterations_completed > 0 {
        trace.mean_accept_rate = accept_sum / trace.iterations_completed as f64;
    }
    Ok(trace)
}

/// Runs SAEM from chart parameters `θ₀`: the latent state starts at the
/// model's initial latent and `s0` is chosen so that `m_step(s0) = θ₀`.
pub fn run_saem_from_params<M: Model + ?Sized>(model: &M, cfg: &SaemConfig, theta0: &Params) -> Result<Trace> {
    if theta0.len() != model.param_dim() {
        return Err(Error::Dimension { what: "initial parameters", expected: model.param_dim(), got: theta0.len() });
    }
    let z0 = model.initial_latent(theta0, &mut rng::child(cfg.seed, tag::INIT));
    run_saem(model, cfg, &z0, &model.stats_for_params(theta0))
}

/// Everything a replicate needs: its derived seed, its split and a
/// [`SaemConfig`] carrying that seed.
pub struct ReplicateInput {
    pub index: usize,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub cfg: SaemConfig,
}

/// Seed of replicate `index` under master seed `seed`.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, tag::REPLICATE), index as u64)
}

/// Runs `n_replicates` independent replicates, each on its own random split
/// of `data` with its own seed, and collects `body`'s results in replicate
/// order. Replicates run concurrently under [`Execution::Parallel`].
pub fn run_replicates<R, F>(
    data: &Dataset,
    split_spec: &SplitSpec,
    cfg: &SaemConfig,
    n_replicates: usize,
    body: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&ReplicateInput) -> R + Sync + Send,
{
    if n_replicates == 0 {
        return Err(Error::Config("n_replicates must be at least 1".into()));
    }
    cfg.validate()?;
    split_spec.n_test(crate::data::unit_count(data, split_spec.row_level))?;
    let inputs: Vec<Result<ReplicateInput>> = (0..n_replicates)
        .map(|index| {
            let seed = replicate_seed(cfg.seed, index);
            let (train, test) = split(data, split_spec, &mut rng::child(seed, tag::SPLIT))?;
            // Inner runs are sequential when replicates already fan out.
            let execution = if cfg.execution.is_parallel() && n_replicates > 1 { Execution::Sequential } else { cfg.execution };
            Ok(ReplicateInput { index, seed, train, test, cfg: SaemConfig { seed, execution, ..cfg.clone() } })
        })
        .collect();
    let inputs = inputs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(par::map_slice(cfg.execution, &inputs, |_, input| body(input)))
}

/// Provenance written as the first line of a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// Header of the trace CSV for `d_theta` parameters and `d_s` statistics.
pub fn trace_header(d_theta: usize, d_s: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "gamma", "accept_rate"].map(String::from).to_vec();
    h.extend((1..=d_theta).map(|j| format!("theta_{j}")));
    h.extend((1..=d_s).map(|j| format!("s_{j}")));
    h.push("h_norm".into());
    h
}

/// Writes one row per record. `θ` is written in natural parameters.
pub fn write_trace_csv<M: Model + ?Sized, W: Write>(
    model: &M,
    trace: &Trace,
    meta: Option<&TraceMeta>,
    mut out: W,
) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# config_hash={} seed={} version={}", m.config_hash, m.seed, m.version)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(model.param_dim(), model.stat_dim()))?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string(), r.gamma.to_string(), r.accept_rate.to_string()];
        row.extend(model.natural_params(&r.theta).iter().map(f64::to_string));
        row.extend(r.s.iter().map(f64::to_string));
        row.push(r.h_norm.map(|h| h.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
