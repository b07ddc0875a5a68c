use super::{logistic_loglik_grad, bernoulli_logit_loglik, Design};
use crate::data::Tabular;
use crate::error::{Error, Result};
use crate::model::{MStep, Model, Params, SufficientStats, VARIANCE_FLOOR};

/// Jitter added to the ARD preconditioner.
pub const ARD_DELTA: f64 = 2e-16;
/// Prior standard deviation of the intercept.
pub const INTERCEPT_PRIOR_SD: f64 = 10.0;

/// Logistic regression with automatic relevance determination:
/// `β_j ~ N(0, 1/γ_j)`, `β₀ ~ N(0, 10²)`, `y_i ~ Bernoulli(logistic(βᵀx_i + β₀))`.
///
/// Latent layout `(β₁, …, β_d, β₀)`. Chart `θ = log γ`, natural `γ`,
/// statistics `S = (β₁², …, β_d²)`.
#[derive(Debug, Clone)]
pub struct ArdLogisticModel {
    x: Design,
    y: Vec<f64>,
}

impl ArdLogisticModel {
    pub fn new(x: Design, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.n {
            return Err(Error::Dimension { what: "responses", expected: x.n, got: y.len() });
        }
        Ok(Self { x, y })
    }

    pub fn from_tabular(t: &Tabular) -> Result<Self> {
        Self::new(Design::from_tabular(t), t.y.clone())
    }

    pub fn design(&self) -> &Design {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }
}

/// `γ̂_j = 1 / max(s_j, floor)` in the `log γ` chart.
pub fn m_step_ard(s: &SufficientStats) -> MStep {
    let mut clamped = false;
    let params = s
        .iter()
        .map(|&v| {
            if !(v >= VARIANCE_FLOOR) {
                clamped = true;
                -VARIANCE_FLOOR.ln()
            } else {
                -v.ln()
            }
        })
        .collect();
    MStep { params: Params(params), clamped }
}

/// Diagonal preconditioner `P_jj = 1/(γ_j² + 0.01) + δ` for the coefficients
/// and `1` for the intercept.
pub fn ard_preconditioner(gamma: &[f64], delta: f64) -> Vec<f64> {
    let mut p: Vec<f64> = gamma.iter().map(|g| 1.0 / (g * g + 0.01) + delta).collect();
    p.push(1.0);
    p
}

impl Model for ArdLogisticModel {
    fn latent_dim(&self) -> usize {
        self.x.d + 1
    }
    fn stat_dim(&self) -> usize {
        self.x.d
    }
    fn param_dim(&self) -> usize {
        self.x.d
    }
    fn param_names(&self) -> Vec<String> {
        (1..=self.x.d).map(|j| format!("gamma_{j}")).collect()
    }

    fn suff_stats(&self, z: &[f64]) -> SufficientStats {
        SufficientStats(z[..self.x.d].iter().map(|b| b * b).collect())
    }

    fn unit_log_joint(&self, _: usize, z: &[f64], theta: &Params) -> f64 {
        let d = self.x.d;
        let (beta, beta0) = (&z[..d], z[d]);
        let ll: f64 = (0..self.x.n).map(|i| bernoulli_logit_loglik(self.y[i], self.x.dot_row(i, beta) + beta0)).sum();
        let prior: f64 = beta.iter().zip(theta.iter()).map(|(b, lg)| 0.5 * lg - 0.5 * lg.exp() * b * b).sum();
        ll + prior - 0.5 * beta0 * beta0 / (INTERCEPT_PRIOR_SD * INTERCEPT_PRIOR_SD)
    }

    fn unit_log_joint_grad(&self, _: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        let d = self.x.d;
        let (beta, beta0) = (&z[..d], z[d]);
        let ll = logistic_loglik_grad(beta, beta0, &self.x, &self.y, grad);
        let mut prior = 0.0;
        for j in 0..d {
            let g = theta[j].exp();
            grad[j] -= g * beta[j];
            prior += 0.5 * theta[j] - 0.5 * g * beta[j] * beta[j];
        }
        let v0 = INTERCEPT_PRIOR_SD * INTERCEPT_PRIOR_SD;
        grad[d] -= beta0 / v0;
        ll + prior - 0.5 * beta0 * beta0 / v0
    }

    fn m_step(&self, s: &SufficientStats) -> Result<MStep> {
        if s.len() != self.x.d {
            return Err(Error::Dimension { what: "sufficient statistics", expected: self.x.d, got: s.len() });
        }
        Ok(m_step_ard(s))
    }

    fn objective(&self, s: &SufficientStats, theta: &Params) -> f64 {
        s.iter().zip(theta.iter()).map(|(v, lg)| 0.5 * lg - 0.5 * lg.exp() * v).sum()
    }

    fn stats_for_params(&self, theta: &Params) -> SufficientStats {
        SufficientStats(theta.iter().map(|lg| (-lg).exp()).collect())
    }

    fn natural_params(&self, theta: &Params) -> Vec<f64> {
        theta.iter().map(|lg| lg.exp()).collect()
    }

    fn chart_params(&self, natural: &[f64]) -> Result<Params> {
        if natural.len() != self.x.d {
            return Err(Error::Dimension { what: "parameters", expected: self.x.d, got: natural.len() });
        }
        natural
            .iter()
            .enumerate()
            .map(|(j, g)| {
                if *g > 0.0 {
                    Ok(g.ln())
                } else {
                    Err(Error::Constraint { name: format!("gamma_{}", j + 1), reason: format!("must be positive, got {g}") })
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Params)
    }

    fn preconditioner(&self, theta: &Params) -> Option<Vec<f64>> {
        Some(ard_preconditioner(&self.natural_params(theta), ARD_DELTA))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic_ard;
    use crate::model::check_gradient;

    #[test]
    fn m_step_is_reciprocal() {
        let m = m_step_ard(&SufficientStats(vec![4.0, 0.25]));
        assert!((m.params[0].exp() - 0.25).abs() < 1e-15);
        assert!((m.params[1].exp() - 4.0).abs() < 1e-15);
        assert!(!m.clamped);
    }

    #[test]
    fn zero_coefficient_clamps() {
        let m = m_step_ard(&SufficientStats(vec![0.0, 1.0]));
        assert!(m.clamped);
        assert!(m.params.is_finite());
        assert!((m.params[0].exp() - 1e8).abs() / 1e8 < 1e-12);
    }

    #[test]
    fn preconditioner_layout() {
        let p = ard_preconditioner(&[0.0, 10.0], ARD_DELTA);
        assert_eq!(p.len(), 3);
        assert!((p[0] - 100.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 100.01).abs() < 1e-15);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn gradient_check() {
        let (ds, _) = gen_synthetic_ard(80, 6, 3, 2).unwrap();
        let m = ArdLogisticModel::from_tabular(ds.as_tabular().unwrap()).unwrap();
        let theta = Params(vec![0.1, -0.4, 1.2, 0.0, 2.0, -1.0]);
        let z = [0.3, -0.2, 0.05, 1.0, -0.7, 0.4, 0.2];
        let r = check_gradient(&m, &z, &theta, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
