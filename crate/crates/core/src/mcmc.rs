//! Langevin kernels: the unadjusted Langevin algorithm (ULA) and its
//! Metropolis-adjusted variant (MALA), with an optional positive diagonal
//! preconditioner `P` and dual-averaging stepsize adaptation for MALA.
//!
//! One step proposes
//!
//! ```text
//! x' = x + η P ⊙ ∇log π(x) + √(2η) √P ⊙ ξ,    ξ ~ N(0, I)
//! ```
//!
//! ULA always moves to `x'`. MALA accepts with the Metropolis–Hastings
//! probability computed from the preconditioned Gaussian proposal density
//! `q(x'|x) ∝ exp(−|x' − x − ηP∇log π(x)|²_{P⁻¹} / (4η))`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Latent;
use crate::rng::Rng;

/// Chains whose Euclidean norm exceeds this are declared divergent.
pub const DIVERGENCE_RADIUS: f64 = 1e8;

const LOG_ETA_BOUND: f64 = 700.0;

/// A differentiable unnormalized log density.
pub trait LangevinTarget {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Returns `log π(x)` and writes `∇log π(x)` into `grad`.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a pair of closures into a [`LangevinTarget`].
pub struct FnTarget<L, G> {
    pub dim: usize,
    pub log_density: L,
    pub grad: G,
}

impl<L, G> LangevinTarget for FnTarget<L, G>
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad)(x, grad);
        (self.log_density)(x)
    }
}

/// Nesterov dual-averaging settings. The defaults are the usual NUTS-style
/// constants with the shrinkage point `μ = log(mu_scale · η₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualAveraging {
    pub target_accept: f64,
    pub adaptation_steps: usize,
    pub t0: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub mu_scale: f64,
}

impl Default for DualAveraging {
    fn default() -> Self {
        Self {
            target_accept: 0.57,
            adaptation_steps: 2000,
            t0: 10.0,
            kappa: 0.75,
            gamma: 0.05,
            mu_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Langevin stepsize η.
    pub eta: f64,
    /// `true` for MALA, `false` for ULA.
    pub adjusted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preconditioner: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<DualAveraging>,
}

impl KernelConfig {
    pub fn ula(eta: f64) -> Self {
        Self { eta, adjusted: false, preconditioner: None, adaptation: None }
    }

    pub fn mala(eta: f64) -> Self {
        Self { eta, adjusted: true, preconditioner: None, adaptation: None }
    }

    pub fn with_preconditioner(mut self, p: Vec<f64>) -> Self {
        self.preconditioner = Some(p);
        self
    }

    pub fn with_adaptation(mut self, a: DualAveraging) -> Self {
        self.adaptation = Some(a);
        self
    }

    pub fn name(&self) -> &'static str {
        if self.adjusted {
            "mala"
        } else {
            "ula"
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("kernel.eta must be positive and finite, got {}", self.eta)));
        }
        if let Some(p) = &self.preconditioner {
            if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("kernel.preconditioner entries must be positive, got {bad}")));
            }
        }
        if let Some(a) = &self.adaptation {
            if !self.adjusted {
                return Err(Error::Config("kernel.adaptation requires an adjusted (MALA) kernel".into()));
            }
            if !(a.target_accept > 0.0 && a.target_accept < 1.0) {
                return Err(Error::Config(format!(
                    "kernel.adaptation.target_accept must lie in (0, 1), got {}",
                    a.target_accept
                )));
            }
            if !(a.t0 >= 0.0 && a.gamma > 0.0 && a.kappa > 0.0 && a.kappa <= 1.0 && a.mu_scale > 0.0) {
                return Err(Error::Config("kernel.adaptation constants out of range".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualAveragingState {
    pub log_eta: f64,
    pub log_eta_avg: f64,
    pub h_avg: f64,
    pub iteration: usize,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub position: Vec<f64>,
    /// Working stepsize; differs from the configured η only under adaptation.
    pub eta: f64,
    pub accept_count: u64,
    pub proposal_count: u64,
    pub dual: Option<DualAveragingState>,
}

impl KernelState {
    pub fn new(position: Vec<f64>, cfg: &KernelConfig) -> Self {
        let dual = cfg.adaptation.as_ref().map(|a| DualAveragingState {
            log_eta: cfg.eta.ln(),
            log_eta_avg: cfg.eta.ln(),
            h_avg: 0.0,
            iteration: 0,
            mu: (a.mu_scale * cfg.eta).ln(),
        });
        Self { position, eta: cfg.eta, accept_count: 0, proposal_count: 0, dual }
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposal_count > 0).then(|| self.accept_count as f64 / self.proposal_count as f64)
    }
}

/// Scratch buffers and the cached density at the current position, so that
/// consecutive MALA steps evaluate the target once per proposal.
struct Workspace {
    logp: f64,
    grad: Vec<f64>,
    proposal: Vec<f64>,
    proposal_grad: Vec<f64>,
}

impl Workspace {
    fn new<T: LangevinTarget + ?Sized>(state: &KernelState, target: &T, adjusted: bool) -> Result<Self> {
        let d = state.position.len();
        let mut grad = vec![0.0; d];
        let logp = target.log_density_and_grad(&state.position, &mut grad);
        if adjusted && !logp.is_finite() {
            return Err(Error::NonFiniteDensity(format!("log π = {logp} at the chain's current position")));
        }
        Ok(Self { logp, grad, proposal: vec![0.0; d], proposal_grad: vec![0.0; d] })
    }
}

fn check_dims<T: LangevinTarget + ?Sized>(state: &KernelState, target: &T, cfg: &KernelConfig) -> Result<()> {
    let d = state.position.len();
    if target.dim() != d {
        return Err(Error::Dimension { what: "target", expected: d, got: target.dim() });
    }
    if let Some(p) = &cfg.preconditioner {
        if p.len() != d {
            return Err(Error::Dimension { what: "preconditioner", expected: d, got: p.len() });
        }
    }
    Ok(())
}

#[inline]
fn precond(cfg: &KernelConfig, i: usize) -> f64 {
    cfg.preconditioner.as_ref().map_or(1.0, |p| p[i])
}

/// Writes the Langevin proposal from `x` (with gradient `g`) into `out`.
fn propose(x: &[f64], g: &[f64], eta: f64, cfg: &KernelConfig, rng: &mut Rng, out: &mut [f64]) {
    let scale = (2.0 * eta).sqrt();
    for i in 0..x.len() {
        let p = precond(cfg, i);
        let xi: f64 = StandardNormal.sample(rng);
        out[i] = x[i] + eta * p * g[i] + scale * p.sqrt() * xi;
    }
}

/// `log q(to | from)` up to a constant shared by both directions.
fn log_proposal(to: &[f64], from: &[f64], grad_from: &[f64], eta: f64, cfg: &KernelConfig) -> f64 {
    let mut q = 0.0;
    for i in 0..to.len() {
        let p = precond(cfg, i);
        let r = to[i] - from[i] - eta * p * grad_from[i];
        q += r * r / p;
    }
    -q / (4.0 * eta)
}

fn diverged(x: &[f64]) -> bool {
    let mut sq = 0.0;
    for v in x {
        if !v.is_finite() {
            return true;
        }
        sq += v * v;
    }
    sq.sqrt() > DIVERGENCE_RADIUS
}

fn ula_transition<T: LangevinTarget + ?Sized>(
    state: &mut KernelState,
    ws: &mut Workspace,
    target: &T,
    cfg: &KernelConfig,
    rng: &mut Rng,
) -> Result<()> {
    propose(&state.position, &ws.grad, state.eta, cfg, rng, &mut ws.proposal);
    state.proposal_count += 1;
    if diverged(&ws.proposal) {
        return Err(Error::Divergence { step: state.proposal_count as usize, eta: state.eta });
    }
    state.accept_count += 1;
    std::mem::swap(&mut state.position, &mut ws.proposal);
    ws.logp = target.log_density_and_grad(&state.position, &mut ws.grad);
    if ws.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: state.proposal_count as usize, eta: state.eta });
    }
    Ok(())
}

/// Returns the Metropolis–Hastings acceptance probability of the proposal.
fn mala_transition<T: LangevinTarget + ?Sized>(
    state: &mut KernelState,
    ws: &mut Workspace,
    target: &T,
    cfg: &KernelConfig,
    rng: &mut Rng,
) -> f64 {
    let eta = state.eta;
    propose(&state.position, &ws.grad, eta, cfg, rng, &mut ws.proposal);
    state.proposal_count += 1;
    let u: f64 = rng.random();
    if ws.proposal.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let logp_new = target.log_density_and_grad(&ws.proposal, &mut ws.proposal_grad);
    if !logp_new.is_finite() || ws.proposal_grad.iter().any(|g| !g.is_finite()) {
        return 0.0;
    }
    let log_ratio = logp_new - ws.logp
        + log_proposal(&state.position, &ws.proposal, &ws.proposal_grad, eta, cfg)
        - log_proposal(&ws.proposal, &state.position, &ws.grad, eta, cfg);
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    if u < accept_prob {
        state.accept_count += 1;
        std::mem::swap(&mut state.position, &mut ws.proposal);
        std::mem::swap(&mut ws.grad, &mut ws.proposal_grad);
        ws.logp = logp_new;
    }
    accept_prob
}

/// One ULA step. ULA never rejects, so both counters advance together.
pub fn ula_step<T: LangevinTarget + ?Sized>(
    state: &mut KernelState,
    target: &T,
    cfg: &KernelConfig,
    rng: &mut Rng,
) -> Result<()> {
    check_dims(state, target, cfg)?;
    let mut ws = Workspace::new(state, target, false)?;
    if ws.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: state.proposal_count as usize, eta: state.eta });
    }
    ula_transition(state, &mut ws, target, cfg, rng)
}

/// One MALA step; returns the acceptance probability of the proposal.
/// Non-finite proposals count as rejections. Adaptation, when configured and
/// still inside its window, is applied after the step.
pub fn mala_step<T: LangevinTarget + ?Sized>(
    state: &mut KernelState,
    target: &T,
    cfg: &KernelConfig,
    rng: &mut Rng,
) -> Result<f64> {
    check_dims(state, target, cfg)?;
    let mut ws = Workspace::new(state, target, true)?;
    let a = mala_transition(state, &mut ws, target, cfg, rng);
    adapt_stepsize(state, a, cfg);
    Ok(a)
}

/// Dual-averaging update of `log η` toward the target acceptance rate.
///
/// `accept_stat` is the acceptance probability of the last proposal (a
/// boolean outcome maps to 0 or 1). Outside the adaptation window this is a
/// no-op; on the last step of the window η is frozen at the averaged value.
pub fn adapt_stepsize(state: &mut KernelState, accept_stat: f64, cfg: &KernelConfig) {
    let (Some(a), Some(dual)) = (cfg.adaptation.as_ref(), state.dual.as_mut()) else {
        return;
    };
    if dual.iteration >= a.adaptation_steps {
        return;
    }
    dual.iteration += 1;
    let t = dual.iteration as f64;
    let w = 1.0 / (t + a.t0);
    dual.h_avg = (1.0 - w) * dual.h_avg + w * (a.target_accept - accept_stat.clamp(0.0, 1.0));
    dual.log_eta = (dual.mu - t.sqrt() / a.gamma * dual.h_avg).clamp(-LOG_ETA_BOUND, LOG_ETA_BOUND);
    let m = t.powf(-a.kappa);
    dual.log_eta_avg = m * dual.log_eta + (1.0 - m) * dual.log_eta_avg;
    state.eta = if dual.iteration == a.adaptation_steps {
        dual.log_eta_avg.exp()
    } else {
        dual.log_eta.exp()
    };
}

/// Applies `n_steps` kernel transitions in place. `on_step` sees the state
/// after every step (used to record traces).
pub fn advance<T, F>(
    state: &mut KernelState,
    target: &T,
    cfg: &KernelConfig,
    rng: &mut Rng,
    n_steps: usize,
    mut on_step: F,
) -> Result<()>
where
    T: LangevinTarget + ?Sized,
    F: FnMut(&KernelState),
{
    if n_steps == 0 {
        return Ok(());
    }
    check_dims(state, target, cfg)?;
    let mut ws = Workspace::new(state, target, cfg.adjusted)?;
    if !cfg.adjusted && ws.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: state.proposal_count as usize, eta: state.eta });
    }
    for _ in 0..n_steps {
        if cfg.adjusted {
            let a = mala_transition(state, &mut ws, target, cfg, rng);
            adapt_stepsize(state, a, cfg);
        } else {
            ula_transition(state, &mut ws, target, cfg, rng)?;
        }
        on_step(state);
    }
    Ok(())
}

/// Runs a fresh chain from `initial`. With `record`, the returned trace holds
/// the position after each of the `n_steps` steps.
pub fn run_chain<T: LangevinTarget + ?Sized>(
    initial: &Latent,
    n_steps: usize,
    target: &T,
    cfg: &KernelConfig,
    rng: &mut Rng,
    record: bool,
) -> Result<(KernelState, Option<Vec<Vec<f64>>>)> {
    cfg.validate()?;
    let mut state = KernelState::new(initial.0.clone(), cfg);
    let mut trace = record.then(|| Vec::with_capacity(n_steps));
    advance(&mut state, target, cfg, rng, n_steps, |s| {
        if let Some(t) = trace.as_mut() {
            t.push(s.position.clone());
        }
    })?;
    Ok((state, trace))
}

/// Standard normal target in `dim` dimensions with per-coordinate variances.
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }
}

impl LangevinTarget for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| -0.5 * (x - m) * (x - m) / v)
            .sum()
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for i in 0..x.len() {
            grad[i] = -(x[i] - self.mean[i]) / self.var[i];
        }
        self.log_density(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = xs.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var, v.len())
    }

    #[test]
    fn zero_step_limit_is_identity() {
        let target = DiagonalGaussian::standard(3);
        let cfg = KernelConfig::ula(1e-300);
        let mut s = KernelState::new(vec![0.5, -1.0, 2.0], &cfg);
        ula_step(&mut s, &target, &cfg, &mut rng::stream(1)).unwrap();
        for (a, b) in s.position.iter().zip([0.5, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-140);
        }
    }

    #[test]
    fn ula_at_mode_is_pure_noise() {
        let target = DiagonalGaussian::standard(4);
        let eta = 0.3;
        let cfg = KernelConfig::ula(eta);
        let mut s = KernelState::new(vec![0.0; 4], &cfg);
        let mut r1 = rng::stream(9);
        ula_step(&mut s, &target, &cfg, &mut r1).unwrap();
        let mut r2 = rng::stream(9);
        for x in &s.position {
            let xi: f64 = StandardNormal.sample(&mut r2);
            assert!((x - (2.0 * eta).sqrt() * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn ula_never_rejects() {
        let target = DiagonalGaussian::standard(2);
        let cfg = KernelConfig::ula(0.9);
        let (s, _) = run_chain(&Latent(vec![3.0, 3.0]), 500, &target, &cfg, &mut rng::stream(2), false).unwrap();
        assert_eq!(s.accept_count, s.proposal_count);
        assert_eq!(s.proposal_count, 500);
    }

    #[test]
    fn ula_divergence_is_reported_with_step() {
        // η > 2σ² makes the linear recursion explode.
        let target = DiagonalGaussian::standard(1);
        let cfg = KernelConfig::ula(5.0);
        let err = run_chain(&Latent(vec![1.0]), 10_000, &target, &cfg, &mut rng::stream(3), false).unwrap_err();
        match err {
            Error::Divergence { step, eta } => {
                assert!(step > 1 && step < 10_000);
                assert_eq!(eta, 5.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn ula_variance_matches_recursion_fixed_point() {
        // v = (1−η)²v + 2η  ⇒  v = 1/(1 − η/2) = 4/3 for η = 0.5.
        let target = DiagonalGaussian::standard(1);
        let cfg = KernelConfig::ula(0.5);
        let (_, tr) = run_chain(&Latent(vec![0.0]), 400_000, &target, &cfg, &mut rng::stream(4), true).unwrap();
        let (_, var, _) = moments(tr.unwrap().into_iter().skip(100).map(|x| x[0]));
        assert!((var - 4.0 / 3.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn mala_symmetric_proposal_accepts() {
        // Flat target and zero noise: the proposal equals the current state.
        let flat = FnTarget { dim: 1, log_density: |_: &[f64]| 0.0, grad: |_: &[f64], g: &mut [f64]| g[0] = 0.0 };
        let cfg = KernelConfig::mala(1e-300);
        let mut s = KernelState::new(vec![0.25], &cfg);
        let a = mala_step(&mut s, &flat, &cfg, &mut rng::stream(5)).unwrap();
        assert_eq!(a, 1.0);
        assert_eq!(s.accept_count, 1);
    }

    #[test]
    fn mala_small_step_is_exact() {
        let target = DiagonalGaussian::standard(1);
        let cfg = KernelConfig::mala(0.01);
        let (_, tr) = run_chain(&Latent(vec![0.0]), 100_000, &target, &cfg, &mut rng::stream(6), true).unwrap();
        let xs: Vec<f64> = tr.unwrap().into_iter().map(|x| x[0]).collect();
        let (_, var, _) = moments(xs.iter().copied());
        // η = 0.01 mixes slowly; batch means give an honest standard error.
        let se = batch_se(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!((var - 1.0).abs() < 3.0 * se, "var {var} se {se}");
    }

    fn batch_se(xs: &[f64]) -> f64 {
        let b = 50;
        let size = xs.len() / b;
        let means: Vec<f64> = (0..b).map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
        let (_, v, _) = moments(means.into_iter());
        (v / b as f64).sqrt()
    }

    #[test]
    fn mala_large_step_rejects_heavily() {
        let target = DiagonalGaussian::standard(1);
        let cfg = KernelConfig::mala(5.0);
        let (s, _) = run_chain(&Latent(vec![0.0]), 20_000, &target, &cfg, &mut rng::stream(7), false).unwrap();
        assert!(s.acceptance_rate().unwrap() < 0.5);
    }

    #[test]
    fn mala_treats_non_finite_proposal_as_rejection() {
        let cliff = FnTarget {
            dim: 1,
            log_density: |x: &[f64]| if x[0] > 0.0 { f64::NEG_INFINITY } else { -0.5 * x[0] * x[0] },
            grad: |x: &[f64], g: &mut [f64]| g[0] = -x[0],
        };
        let cfg = KernelConfig::mala(0.5);
        let (s, _) = run_chain(&Latent(vec![-0.1]), 2000, &cliff, &cfg, &mut rng::stream(8), false).unwrap();
        assert_eq!(s.proposal_count, 2000);
        assert!(s.accept_count < s.proposal_count);
        assert!(s.position[0] <= 0.0);
    }

    #[test]
    fn mala_errors_on_non_finite_current_state() {
        let bad = FnTarget { dim: 1, log_density: |_: &[f64]| f64::NAN, grad: |_: &[f64], g: &mut [f64]| g[0] = 0.0 };
        let cfg = KernelConfig::mala(0.1);
        let mut s = KernelState::new(vec![0.0], &cfg);
        assert!(matches!(mala_step(&mut s, &bad, &cfg, &mut rng::stream(1)), Err(Error::NonFiniteDensity(_))));
    }

    #[test]
    fn adaptation_responds_monotonically() {
        let cfg = KernelConfig::mala(0.1).with_adaptation(DualAveraging { adaptation_steps: 200, ..Default::default() });
        for (stat, increasing) in [(1.0, true), (0.0, false)] {
            let mut s = KernelState::new(vec![0.0], &cfg);
            let mut prev = s.eta;
            for step in 0..199 {
                adapt_stepsize(&mut s, stat, &cfg);
                if increasing {
                    assert!(s.eta > prev);
                } else if step > 0 {
                    // The first update always moves toward the shrinkage point log(10 η₀).
                    assert!(s.eta < prev);
                }
                prev = s.eta;
            }
            assert_eq!(s.eta > cfg.eta, increasing);
        }
    }

    #[test]
    fn adaptation_freezes_after_window() {
        let cfg = KernelConfig::mala(0.1).with_adaptation(DualAveraging { adaptation_steps: 10, ..Default::default() });
        let mut s = KernelState::new(vec![0.0], &cfg);
        for _ in 0..10 {
            adapt_stepsize(&mut s, 0.3, &cfg);
        }
        let frozen = s.eta;
        assert_eq!(frozen, s.dual.as_ref().unwrap().log_eta_avg.exp());
        adapt_stepsize(&mut s, 1.0, &cfg);
        assert_eq!(s.eta, frozen);
    }

    #[test]
    fn adaptation_saturates() {
        let cfg = KernelConfig::mala(0.1).with_adaptation(DualAveraging { adaptation_steps: 10_000_000, ..Default::default() });
        let mut s = KernelState::new(vec![0.0], &cfg);
        for _ in 0..200_000 {
            adapt_stepsize(&mut s, 1.0, &cfg);
        }
        assert!(s.eta.is_finite() && s.eta > 0.0);
    }

    #[test]
    fn run_chain_base_cases() {
        let target = DiagonalGaussian::standard(2);
        let cfg = KernelConfig::mala(0.2);
        let z0 = Latent(vec![1.0, -1.0]);
        let (s0, t0) = run_chain(&z0, 0, &target, &cfg, &mut rng::stream(1), true).unwrap();
        assert_eq!(s0.position, z0.0);
        assert!(t0.unwrap().is_empty());

        let (s1, _) = run_chain(&z0, 1, &target, &cfg, &mut rng::stream(1), false).unwrap();
        let mut single = KernelState::new(z0.0.clone(), &cfg);
        mala_step(&mut single, &target, &cfg, &mut rng::stream(1)).unwrap();
        assert_eq!(s1, single);

        let (_, a) = run_chain(&z0, 300, &target, &cfg, &mut rng::stream(11), true).unwrap();
        let (_, b) = run_chain(&z0, 300, &target, &cfg, &mut rng::stream(11), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::ula(0.0).validate().is_err());
        assert!(KernelConfig::ula(-1.0).validate().is_err());
        assert!(KernelConfig::ula(0.1).with_preconditioner(vec![1.0, 0.0]).validate().is_err());
        assert!(KernelConfig::ula(0.1).with_adaptation(DualAveraging::default()).validate().is_err());
        assert!(KernelConfig::mala(0.1).with_adaptation(DualAveraging::default()).validate().is_ok());
    }
}
