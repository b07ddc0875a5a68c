use super::LN_2PI;
use crate::error::{Error, Result};
use crate::model::{floor_variance, Latent, MStep, Model, Params, SufficientStats};
use crate::rng::{self, Rng};

/// Observations of one group: `y_j = z + ε_j`, `ε_j ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Group {
    pub fn from_values(ys: &[f64]) -> Self {
        Self { n: ys.len(), sum: ys.iter().sum(), sum_sq: ys.iter().map(|y| y * y).sum() }
    }
}

/// Conjugate Gaussian hierarchy with a closed-form posterior:
///
/// ```text
/// z_i ~ N(μ, τ²),   y_ij | z_i ~ N(z_i, 1)
/// ```
///
/// One latent per group. Chart `θ = (μ, log τ²)`, natural `(μ, τ²)`,
/// statistics `S(z) = (Σ z_i, Σ z_i²)`.
#[derive(Debug, Clone)]
pub struct ConjugateGaussianOracle {
    groups: Vec<Group>,
}

impl ConjugateGaussianOracle {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() || groups.iter().any(|g| g.n == 0) {
            return Err(Error::Domain("oracle needs at least one nonempty group".into()));
        }
        Ok(Self { groups })
    }

    /// Simulates `n_groups` groups of `obs_per_group` observations from `(μ, τ²)`.
    pub fn synthetic(n_groups: usize, obs_per_group: usize, mu: f64, tau2: f64, seed: u64) -> Result<Self> {
        let mut r = rng::child(seed, rng::tag::DATA);
        let groups = (0..n_groups)
            .map(|_| {
                let z = mu + tau2.sqrt() * rng::normal(&mut r);
                let ys: Vec<f64> = (0..obs_per_group).map(|_| z + rng::normal(&mut r)).collect();
                Group::from_values(&ys)
            })
            .collect();
        Self::new(groups)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    fn m(&self) -> f64 {
        self.groups.len() as f64
    }

    /// Posterior `(mean, variance)` of `z_i` given `θ`.
    pub fn posterior(&self, i: usize, theta: &Params) -> (f64, f64) {
        let g = &self.groups[i];
        let prec_prior = (-theta[1]).exp();
        let v = 1.0 / (prec_prior + g.n as f64);
        (v * (theta[0] * prec_prior + g.sum), v)
    }

    /// Marginal log-density of group `i`'s observations, `y_i ~ N(μ1, I + τ²11ᵀ)`.
    pub fn group_marginal_log_density(&self, i: usize, theta: &Params) -> f64 {
        let g = &self.groups[i];
        let (mu, tau2) = (theta[0], theta[1].exp());
        let n = g.n as f64;
        let centered_sum = g.sum - n * mu;
        let centered_sq = g.sum_sq - 2.0 * mu * g.sum + n * mu * mu;
        let shrink = tau2 / (1.0 + n * tau2);
        -0.5 * n * LN_2PI - 0.5 * (1.0 + n * tau2).ln() - 0.5 * (centered_sq - shrink * centered_sum * centered_sum)
    }

    /// Marginal log-likelihood `l(θ) = log p(y | θ)`.
    pub fn marginal_loglik(&self, theta: &Params) -> f64 {
        (0..self.groups.len()).map(|i| self.group_marginal_log_density(i, theta)).sum()
    }

    /// Deterministic EM iterates `θ_{k+1} = θ̂(s̄(θ_k))`, starting with `θ₀`.
    /// The returned sequence has `n + 1` entries.
    pub fn exact_em(&self, theta0: &Params, n: usize) -> Result<Vec<Params>> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(theta0.clone());
        let mut theta = theta0.clone();
        for _ in 0..n {
            let s = self.posterior_mean_stats(&theta);
            theta = self.m_step(&s)?.params;
            out.push(theta.clone());
        }
        Ok(out)
    }

    /// Runs exact EM until successive chart iterates differ by less than `tol`.
    pub fn em_fixed_point(&self, theta0: &Params, tol: f64, max_iter: usize) -> Result<Params> {
        let mut theta = theta0.clone();
        for _ in 0..max_iter {
            let next = self.m_step(&self.posterior_mean_stats(&theta))?.params;
            let delta = next.iter().zip(theta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            theta = next;
            if delta < tol {
                return Ok(theta);
            }
        }
        Err(Error::Domain(format!("exact EM did not reach tolerance {tol} in {max_iter} iterations")))
    }

    /// Closed-form maximum marginal likelihood `(μ̂, τ̂²)`, available when all
    /// groups have the same size: `μ̂` is the mean of group means and
    /// `τ̂² = max(0, var(ȳ) − 1/n)`.
    pub fn closed_form_mle(&self) -> Option<(f64, f64)> {
        let n = self.groups[0].n;
        if self.groups.iter().any(|g| g.n != n) {
            return None;
        }
        let means: Vec<f64> = self.groups.iter().map(|g| g.sum / n as f64).collect();
        let mu = means.iter().sum::<f64>() / self.m();
        let var = means.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / self.m();
        Some((mu, (var - 1.0 / n as f64).max(0.0)))
    }

    fn posterior_mean_stats(&self, theta: &Params) -> SufficientStats {
        let mut s = [0.0, 0.0];
        for i in 0..self.groups.len() {
            let (mean, var) = self.posterior(i, theta);
            s[0] += mean;
            s[1] += mean * mean + var;
        }
        SufficientStats(s.to_vec())
    }
}

impl Model for ConjugateGaussianOracle {
    fn latent_dim(&self) -> usize {
        self.groups.len()
    }
    fn stat_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "tau2".into()]
    }
    fn n_units(&self) -> usize {
        self.groups.len()
    }
    fn unit_range(&self, unit: usize) -> std::ops::Range<usize> {
        unit..unit + 1
    }

    fn suff_stats(&self, z: &[f64]) -> SufficientStats {
        SufficientStats(vec![z.iter().sum(), z.iter().map(|v| v * v).sum()])
    }

    fn unit_log_joint(&self, unit: usize, z: &[f64], theta: &Params) -> f64 {
        let g = &self.groups[unit];
        let z = z[0];
        let lik = -0.5 * (g.sum_sq - 2.0 * z * g.sum + g.n as f64 * z * z);
        let prior = -0.5 * (z - theta[0]).powi(2) * (-theta[1]).exp() - 0.5 * theta[1];
        lik + prior
    }

    fn unit_log_joint_grad(&self, unit: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        let g = &self.groups[unit];
        grad[0] = g.sum - g.n as f64 * z[0] - (z[0] - theta[0]) * (-theta[1]).exp();
        self.unit_log_joint(unit, z, theta)
    }

    fn m_step(&self, s: &SufficientStats) -> Result<MStep> {
        let mu = s[0] / self.m();
        let mut clamped = false;
        let tau2 = floor_variance(s[1] / self.m() - mu * mu, &mut clamped);
        Ok(MStep { params: Params(vec![mu, tau2.ln()]), clamped })
    }

    fn objective(&self, s: &SufficientStats, theta: &Params) -> f64 {
        let (mu, lt) = (theta[0], theta[1]);
        -0.5 * (s[1] - 2.0 * mu * s[0] + self.m() * mu * mu) * (-lt).exp() - 0.5 * self.m() * lt
    }

    fn stats_for_params(&self, theta: &Params) -> SufficientStats {
        let m = self.m();
        SufficientStats(vec![m * theta[0], m * (theta[1].exp() + theta[0] * theta[0])])
    }

    fn natural_params(&self, theta: &Params) -> Vec<f64> {
        vec![theta[0], theta[1].exp()]
    }

    fn chart_params(&self, natural: &[f64]) -> Result<Params> {
        match natural {
            [mu, tau2] if *tau2 > 0.0 => Ok(Params(vec![*mu, tau2.ln()])),
            [_, tau2] => Err(Error::Constraint { name: "tau2".into(), reason: format!("must be positive, got {tau2}") }),
            _ => Err(Error::Dimension { what: "parameters", expected: 2, got: natural.len() }),
        }
    }

    fn exact_posterior_mean_stats(&self, theta: &Params) -> Option<SufficientStats> {
        Some(self.posterior_mean_stats(theta))
    }

    fn sample_exact_posterior(&self, theta: &Params, rng: &mut Rng) -> Option<Latent> {
        Some(Latent(
            (0..self.groups.len())
                .map(|i| {
                    let (m, v) = self.posterior(i, theta);
                    m + v.sqrt() * rng::normal(rng)
                })
                .collect(),
        ))
    }
}
