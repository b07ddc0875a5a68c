//! Predictive evaluation: annealed importance sampling for marginal
//! log-predictive densities, posterior-sample LPD and bootstrap intervals.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{advance, DualAveraging, KernelConfig, KernelState, LangevinTarget};
use crate::model::{Latent, Model, Params};
use crate::models::{
    bernoulli_logit_loglik, ConjugateGaussianOracle, Design, PoissonLogNormalModel, TheophyllineModel,
    LN_2PI,
};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};

/// `log((1/n) Σ e^{x_i})`, or `−∞` when every term is `−∞`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return if max == f64::INFINITY { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (sum / xs.len() as f64).ln()
}

/// A density `prior(z) · likelihood(z)^t` to anneal along `t ∈ [0, 1]`.
pub trait AnnealingTarget: Sync {
    fn dim(&self) -> usize;
    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64>;
    fn log_prior_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;
    fn log_likelihood(&self, z: &[f64]) -> f64;
    fn log_likelihood_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;
    /// Diagonal scale for the transition kernel; prior variances by default.
    fn kernel_scale(&self) -> Option<Vec<f64>> {
        None
    }
}

struct Tempered<'a, A: AnnealingTarget + ?Sized> {
    target: &'a A,
    t: f64,
}

impl<A: AnnealingTarget + ?Sized> LangevinTarget for Tempered<'_, A> {
    fn dim(&self) -> usize {
        self.target.dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.log_density_and_grad(x, &mut g)
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let lp = self.target.log_prior_and_grad(x, grad);
        let mut gl = vec![0.0; x.len()];
        let ll = self.target.log_likelihood_and_grad(x, &mut gl);
        for (g, l) in grad.iter_mut().zip(&gl) {
            *g += self.t * l;
        }
        lp + self.t * ll
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AisConfig {
    pub n_weights: usize,
    pub n_annealing_steps: usize,
    pub transitions_per_temperature: usize,
    /// Transition kernel; its preconditioner defaults to the target's
    /// kernel scale when unset.
    pub kernel: KernelConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            n_weights: 100,
            n_annealing_steps: 1000,
            transitions_per_temperature: 1,
            kernel: KernelConfig::mala(0.1),
            execution: Execution::default(),
        }
    }
}

impl AisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_weights == 0 || self.n_annealing_steps == 0 {
            return Err(Error::Config("AIS needs at least one weight and one annealing step".into()));
        }
        self.kernel.validate()
    }
}

/// `t_j = (j/J)²` for `j = 0..=J`.
pub fn quadratic_schedule(n_steps: usize) -> Vec<f64> {
    let j_max = n_steps as f64;
    (0..=n_steps).map(|j| if j == n_steps { 1.0 } else { (j as f64 / j_max).powi(2) }).collect()
}

fn ais_weight<A: AnnealingTarget + ?Sized>(
    target: &A,
    schedule: &[f64],
    cfg: &AisConfig,
    kernel: &KernelConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut state = KernelState::new(target.sample_prior(rng), kernel);
    let mut log_w = 0.0;
    let last = schedule.len() - 1;
    for j in 1..=last {
        let ll = target.log_likelihood(&state.position);
        let ll = if ll.is_nan() { f64::NEG_INFINITY } else { ll };
        log_w += (schedule[j] - schedule[j - 1]) * ll;
        if log_w == f64::NEG_INFINITY {
            return Ok(log_w);
        }
        if j < last {
            let tempered = Tempered { target, t: schedule[j] };
            advance(&mut state, &tempered, kernel, rng, cfg.transitions_per_temperature, |_| {})?;
        }
    }
    Ok(log_w)
}

/// AIS estimate of `log ∫ prior(z) likelihood(z) dz`: the log-mean-exp of
/// `n_weights` independent annealing weights along the quadratic schedule,
/// with one kernel transition per intermediate temperature.
pub fn ais_marginal_lpd<A: AnnealingTarget + ?Sized>(target: &A, cfg: &AisConfig, rng: &mut Rng) -> Result<f64> {
    cfg.validate()?;
    let schedule = quadratic_schedule(cfg.n_annealing_steps);
    let mut kernel = cfg.kernel.clone();
    if kernel.preconditioner.is_none() {
        kernel.preconditioner = target.kernel_scale();
    }
    let base: u64 = rng.random();
    let weights = par::map_range(cfg.execution, cfg.n_weights, |p| {
        ais_weight(target, &schedule, cfg, &kernel, &mut rng::child(base, p as u64))
    });
    let weights = weights.into_iter().collect::<Result<Vec<f64>>>()?;
    let lpd = log_mean_exp(&weights);
    if lpd == f64::NEG_INFINITY || lpd.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    Ok(lpd)
}

/// Unit-level structure shared by the mixed models: a diagonal Gaussian
/// prior on each unit's latent block and a per-unit likelihood.
pub trait GaussianUnits: Sync {
    fn n_eval_units(&self) -> usize;
    fn eval_unit_id(&self, unit: usize) -> String;
    fn unit_dim(&self) -> usize;
    /// Prior `(mean, variance)` of unit `unit`'s latent block.
    fn unit_prior(&self, unit: usize, theta: &Params) -> (Vec<f64>, Vec<f64>);
    fn unit_log_likelihood_grad(&self, unit: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64;
}

/// One unit of a [`GaussianUnits`] model as an annealing target.
pub struct UnitAnnealing<'a, M: GaussianUnits + ?Sized> {
    model: &'a M,
    unit: usize,
    theta: &'a Params,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl<'a, M: GaussianUnits + ?Sized> UnitAnnealing<'a, M> {
    pub fn new(model: &'a M, unit: usize, theta: &'a Params) -> Self {
        let (mean, var) = model.unit_prior(unit, theta);
        Self { model, unit, theta, mean, var }
    }
}

impl<M: GaussianUnits + ?Sized> AnnealingTarget for UnitAnnealing<'_, M> {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean.iter().zip(&self.var).map(|(m, v)| m + v.sqrt() * rng::normal(rng)).collect()
    }
    fn log_prior_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..z.len() {
            let r = z[i] - self.mean[i];
            grad[i] = -r / self.var[i];
            lp -= 0.5 * (r * r / self.var[i] + self.var[i].ln() + LN_2PI);
        }
        lp
    }
    fn log_likelihood(&self, z: &[f64]) -> f64 {
        let mut g = vec![0.0; z.len()];
        self.model.unit_log_likelihood_grad(self.unit, z, self.theta, &mut g)
    }
    fn log_likelihood_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.model.unit_log_likelihood_grad(self.unit, z, self.theta, grad)
    }
    fn kernel_scale(&self) -> Option<Vec<f64>> {
        Some(self.var.clone())
    }
}

impl GaussianUnits for ConjugateGaussianOracle {
    fn n_eval_units(&self) -> usize {
        self.groups().len()
    }
    fn eval_unit_id(&self, unit: usize) -> String {
        unit.to_string()
    }
    fn unit_dim(&self) -> usize {
        1
    }
    fn unit_prior(&self, _: usize, theta: &Params) -> (Vec<f64>, Vec<f64>) {
        (vec![theta[0]], vec![theta[1].exp()])
    }
    fn unit_log_likelihood_grad(&self, unit: usize, z: &[f64], _: &Params, grad: &mut [f64]) -> f64 {
        let g = &self.groups()[unit];
        let n = g.n as f64;
        grad[0] = g.sum - n * z[0];
        -0.5 * (g.sum_sq - 2.0 * z[0] * g.sum + n * z[0] * z[0]) - 0.5 * n * LN_2PI
    }
}

impl GaussianUnits for TheophyllineModel {
    fn n_eval_units(&self) -> usize {
        self.patients().len()
    }
    fn eval_unit_id(&self, unit: usize) -> String {
        self.patients()[unit].id.clone()
    }
    fn unit_dim(&self) -> usize {
        3
    }
    fn unit_prior(&self, _: usize, theta: &Params) -> (Vec<f64>, Vec<f64>) {
        // Latent order (log V, log ka, log Cl); parameter order (ka, V, Cl).
        (vec![theta[1], theta[0], theta[2]], vec![theta[4].exp(), theta[3].exp(), theta[5].exp()])
    }
    fn unit_log_likelihood_grad(&self, unit: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        self.patient_log_likelihood_grad(unit, z, theta, grad)
    }
}

impl GaussianUnits for PoissonLogNormalModel {
    fn n_eval_units(&self) -> usize {
        self.responses().len()
    }
    fn eval_unit_id(&self, unit: usize) -> String {
        unit.to_string()
    }
    fn unit_dim(&self) -> usize {
        1
    }
    fn unit_prior(&self, unit: usize, theta: &Params) -> (Vec<f64>, Vec<f64>) {
        (vec![self.linear_predictor(unit, theta)], vec![theta[self.n_coefficients()].exp()])
    }
    fn unit_log_likelihood_grad(&self, unit: usize, z: &[f64], _: &Params, grad: &mut [f64]) -> f64 {
        grad[0] = self.responses()[unit] - z[0].exp();
        self.log_likelihood(unit, z[0])
    }
}

/// Per-unit log-predictive densities with their mean and an optional
/// bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpdResult {
    pub unit_ids: Vec<String>,
    pub lpd: Vec<f64>,
    pub mean: f64,
    pub ci: Option<(f64, f64)>,
}

impl LpdResult {
    pub fn new(unit_ids: Vec<String>, lpd: Vec<f64>) -> Self {
        let mean = if lpd.is_empty() { f64::NAN } else { lpd.iter().sum::<f64>() / lpd.len() as f64 };
        Self { unit_ids, lpd, mean, ci: None }
    }

    /// Attaches a percentile-bootstrap interval of the mean.
    pub fn with_bootstrap(mut self, level: f64, n_resamples: usize, rng: &mut Rng) -> Result<Self> {
        self.ci = Some(bootstrap_ci(&self.lpd, level, n_resamples, rng)?);
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.lpd.len()
    }

    /// Writes `unit_id,lpd` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_id", "lpd"])?;
        for (id, v) in self.unit_ids.iter().zip(&self.lpd) {
            w.write_record([id.as_str(), &v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{mean, ci_lower, ci_upper, n_units}`.
    pub fn aggregate_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean,
            "ci_lower": self.ci.map(|c| c.0),
            "ci_upper": self.ci.map(|c| c.1),
            "n_units": self.n_units(),
        })
    }
}

/// AIS marginal LPD of every unit of `model` at `θ̂`.
pub fn ais_unit_lpds<M: GaussianUnits + ?Sized>(model: &M, theta: &Params, cfg: &AisConfig, seed: u64) -> Result<LpdResult> {
    let n = model.n_eval_units();
    let mut ids = Vec::with_capacity(n);
    let mut lpd = Vec::with_capacity(n);
    for u in 0..n {
        let target = UnitAnnealing::new(model, u, theta);
        ids.push(model.eval_unit_id(u));
        lpd.push(ais_marginal_lpd(&target, cfg, &mut rng::child(seed, u as u64))?);
    }
    Ok(LpdResult::new(ids, lpd))
}

/// Per-unit predictive log-likelihood `log p(y_i | z)` on held-out data.
pub trait Predictive: Sync {
    fn n_units(&self) -> usize;
    fn unit_log_likelihood(&self, unit: usize, z: &[f64]) -> f64;
}

/// Held-out binary responses under a logistic link. With `intercept`, the
/// last latent coordinate is the intercept.
pub struct LogisticPredictive {
    pub x: Design,
    pub y: Vec<f64>,
    pub intercept: bool,
}

impl Predictive for LogisticPredictive {
    fn n_units(&self) -> usize {
        self.y.len()
    }
    fn unit_log_likelihood(&self, unit: usize, z: &[f64]) -> f64 {
        let mut t = self.x.dot_row(unit, &z[..self.x.d]);
        if self.intercept {
            t += z[self.x.d];
        }
        bernoulli_logit_loglik(self.y[unit], t)
    }
}

/// `LPD_i = log((1/S) Σ_s p(y_i | z⁽ˢ⁾))` over the given draws.
pub fn lpd_from_draws<P: Predictive + ?Sized>(predictive: &P, draws: &[Vec<f64>], exec: Execution) -> Vec<f64> {
    par::map_range(exec, predictive.n_units(), |u| {
        let terms: Vec<f64> = draws.iter().map(|z| predictive.unit_log_likelihood(u, z)).collect();
        log_mean_exp(&terms)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorLpdConfig {
    pub n_adapt: usize,
    pub n_samples: usize,
    pub initial_eta: f64,
    pub target_accept: f64,
}

impl Default for PosteriorLpdConfig {
    fn default() -> Self {
        Self { n_adapt: 2000, n_samples: 2000, initial_eta: 1e-3, target_accept: 0.57 }
    }
}

struct JointTarget<'a, M: Model + ?Sized> {
    model: &'a M,
    theta: &'a Params,
}

impl<M: Model + ?Sized> LangevinTarget for JointTarget<'_, M> {
    fn dim(&self) -> usize {
        self.model.latent_dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.model.log_joint(x, self.theta)
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for u in 0..self.model.n_units() {
            let r = self.model.unit_range(u);
            total += self.model.unit_log_joint_grad(u, &x[r.clone()], self.theta, &mut grad[r]);
        }
        total
    }
}

/// Posterior draws from `p(z | y_train, θ̂)` with adapted MALA: `n_adapt`
/// dual-averaging steps toward the target acceptance, then `n_samples`
/// recorded steps at the frozen stepsize.
pub fn posterior_draws<M: Model + ?Sized>(
    model: &M,
    theta: &Params,
    initial: &Latent,
    cfg: &PosteriorLpdConfig,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut kernel = KernelConfig::mala(cfg.initial_eta).with_adaptation(DualAveraging {
        target_accept: cfg.target_accept,
        adaptation_steps: cfg.n_adapt,
        ..Default::default()
    });
    if let Some(p) = model.preconditioner(theta) {
        kernel = kernel.with_preconditioner(p);
    }
    kernel.validate()?;
    let target = JointTarget { model, theta };
    let mut state = KernelState::new(initial.0.clone(), &kernel);
    advance(&mut state, &target, &kernel, rng, cfg.n_adapt, |_| {})?;
    let (a0, p0) = (state.accept_count, state.proposal_count);
    let mut draws = Vec::with_capacity(cfg.n_samples);
    advance(&mut state, &target, &kernel, rng, cfg.n_samples, |s| draws.push(s.position.clone()))?;
    let rate = (state.accept_count - a0) as f64 / (state.proposal_count - p0).max(1) as f64;
    if draws.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence { step: cfg.n_adapt + cfg.n_samples, eta: state.eta });
    }
    Ok((draws, rate))
}

/// Posterior-sample LPD of the held-out units in `predictive`.
pub fn posterior_sample_lpd<M: Model + ?Sized, P: Predictive + ?Sized>(
    model: &M,
    theta: &Params,
    initial: &Latent,
    predictive: &P,
    cfg: &PosteriorLpdConfig,
    rng: &mut Rng,
    exec: Execution,
) -> Result<LpdResult> {
    let (draws, _) = posterior_draws(model, theta, initial, cfg, rng)?;
    let lpd = lpd_from_draws(predictive, &draws, exec);
    Ok(LpdResult::new((0..lpd.len()).map(|i| i.to_string()).collect(), lpd))
}

/// Linear-interpolated sample quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of the mean at confidence `level`.
pub fn bootstrap_ci(values: &[f64], level: f64, n_resamples: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Domain("bootstrap needs at least one value".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if n_resamples == 0 {
        return Err(Error::Domain("bootstrap needs at least one resample".into()));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], values[0]));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&means, alpha), quantile(&means, 1.0 - alpha)))
}
