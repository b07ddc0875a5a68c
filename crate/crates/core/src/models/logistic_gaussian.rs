use super::{bernoulli_logit_loglik, logistic, Design};
use crate::data::Tabular;
use crate::error::{Error, Result};
use crate::model::{floor_variance, MStep, Model, Params, SufficientStats};

/// Logistic regression with an exchangeable Gaussian prior,
/// `β ~ N(μ1_d, σ²I_d)`, `y_i ~ Bernoulli(logistic(βᵀx_i))`.
///
/// Chart: `θ = (μ, log σ²)`. Statistics: `S(β) = (Σβ_j, Σβ_j²)`.
#[derive(Debug, Clone)]
pub struct LogisticGaussianModel {
    x: Design,
    y: Vec<f64>,
}

impl LogisticGaussianModel {
    pub fn new(x: Design, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.n {
            return Err(Error::Dimension { what: "responses", expected: x.n, got: y.len() });
        }
        Ok(Self { x, y })
    }

    pub fn from_tabular(t: &Tabular) -> Result<Self> {
        Self::new(Design::from_tabular(t), t.y.clone())
    }

    pub fn dim(&self) -> usize {
        self.x.d
    }

    pub fn design(&self) -> &Design {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }
}

/// `μ̂ = s₁/d`, `σ̂² = s₂/d − μ̂²`, returned in the `(μ, log σ²)` chart.
pub fn m_step_logistic_gaussian(s: &SufficientStats, d: usize) -> Result<MStep> {
    if s.len() != 2 {
        return Err(Error::Dimension { what: "sufficient statistics", expected: 2, got: s.len() });
    }
    let d = d as f64;
    let mu = s[0] / d;
    let mut clamped = false;
    let var = floor_variance(s[1] / d - mu * mu, &mut clamped);
    Ok(MStep { params: Params(vec![mu, var.ln()]), clamped })
}

impl Model for LogisticGaussianModel {
    fn latent_dim(&self) -> usize {
        self.x.d
    }
    fn stat_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "sigma".into()]
    }

    fn suff_stats(&self, z: &[f64]) -> SufficientStats {
        SufficientStats(vec![z.iter().sum(), z.iter().map(|b| b * b).sum()])
    }

    fn unit_log_joint(&self, _: usize, z: &[f64], theta: &Params) -> f64 {
        let (mu, log_var) = (theta[0], theta[1]);
        let inv_var = (-log_var).exp();
        let prior: f64 = z.iter().map(|b| (b - mu) * (b - mu)).sum::<f64>() * -0.5 * inv_var;
        let ll: f64 = (0..self.x.n).map(|i| bernoulli_logit_loglik(self.y[i], self.x.dot_row(i, z))).sum();
        ll + prior - 0.5 * self.x.d as f64 * log_var
    }

    fn unit_log_joint_grad(&self, _: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        let (mu, log_var) = (theta[0], theta[1]);
        let inv_var = (-log_var).exp();
        let mut ll = 0.0;
        for (g, b) in grad.iter_mut().zip(z) {
            *g = -(b - mu) * inv_var;
            ll -= 0.5 * (b - mu) * (b - mu) * inv_var;
        }
        for i in 0..self.x.n {
            let t = self.x.dot_row(i, z);
            ll += bernoulli_logit_loglik(self.y[i], t);
            self.x.axpy_row(i, self.y[i] - logistic(t), grad);
        }
        ll - 0.5 * self.x.d as f64 * log_var
    }

    fn m_step(&self, s: &SufficientStats) -> Result<MStep> {
        m_step_logistic_gaussian(s, self.x.d)
    }

    fn objective(&self, s: &SufficientStats, theta: &Params) -> f64 {
        let d = self.x.d as f64;
        let (mu, log_var) = (theta[0], theta[1]);
        -(s[1] - 2.0 * mu * s[0] + d * mu * mu) * 0.5 * (-log_var).exp() - 0.5 * d * log_var
    }

    fn stats_for_params(&self, theta: &Params) -> SufficientStats {
        let d = self.x.d as f64;
        SufficientStats(vec![d * theta[0], d * (theta[1].exp() + theta[0] * theta[0])])
    }

    fn natural_params(&self, theta: &Params) -> Vec<f64> {
        vec![theta[0], (0.5 * theta[1]).exp()]
    }

    fn chart_params(&self, natural: &[f64]) -> Result<Params> {
        match natural {
            [mu, sigma] if *sigma > 0.0 => Ok(Params(vec![*mu, 2.0 * sigma.ln()])),
            [_, sigma] => Err(Error::Constraint { name: "sigma".into(), reason: format!("must be positive, got {sigma}") }),
            _ => Err(Error::Dimension { what: "parameters", expected: 2, got: natural.len() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_gradient;
    use crate::rng;
    use rand::Rng as _;

    fn small_model(seed: u64) -> LogisticGaussianModel {
        let mut r = rng::stream(seed);
        let (n, d) = (30, 4);
        let x = Design::new(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        LogisticGaussianModel::new(x, y).unwrap()
    }

    #[test]
    fn m_step_sample_moments() {
        // β = (1, 3): s = (4, 10) ⇒ μ̂ = 2, σ̂² = 1.
        let m = m_step_logistic_gaussian(&SufficientStats(vec![4.0, 10.0]), 2).unwrap();
        assert_eq!(m.params[0], 2.0);
        assert!((m.params[1].exp() - 1.0).abs() < 1e-15);
        assert!(!m.clamped);
    }

    #[test]
    fn m_step_clamps_degenerate_variance() {
        // All coefficients equal to 2.
        let m = m_step_logistic_gaussian(&SufficientStats(vec![6.0, 12.0]), 3).unwrap();
        assert!(m.clamped);
        assert_eq!(m.params[1], crate::model::VARIANCE_FLOOR.ln());
    }

    #[test]
    fn m_step_matches_direct_moments() {
        let mut r = rng::stream(3);
        let beta: Vec<f64> = (0..50).map(|_| r.random_range(-3.0..3.0)).collect();
        let mean = beta.iter().sum::<f64>() / 50.0;
        let var = beta.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / 50.0;
        let model = small_model(1);
        let s = SufficientStats(vec![beta.iter().sum(), beta.iter().map(|b| b * b).sum()]);
        let m = m_step_logistic_gaussian(&s, 50).unwrap();
        assert!((m.params[0] - mean).abs() < 1e-12);
        assert!((m.params[1].exp() - var).abs() < 1e-12);
        let _ = model;
    }

    #[test]
    fn gradient_at_origin() {
        let m = small_model(7);
        let r = check_gradient(&m, &[0.0; 4], &Params(vec![0.3, -0.2]), 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
    }

    #[test]
    fn chart_round_trip() {
        let m = small_model(2);
        let p = m.chart_params(&[0.5, 2.0]).unwrap();
        let back = m.natural_params(&p);
        assert!((back[0] - 0.5).abs() < 1e-15 && (back[1] - 2.0).abs() < 1e-15);
        assert!(m.chart_params(&[0.0, -1.0]).is_err());
        let s = m.stats_for_params(&p);
        let again = m.m_step(&s).unwrap().params;
        assert!((again[0] - p[0]).abs() < 1e-12 && (again[1] - p[1]).abs() < 1e-12);
    }
}
