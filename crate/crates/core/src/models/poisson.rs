use nalgebra::{DMatrix, DVector};

use super::{ln_factorial, Design, LN_2PI};
use crate::data::Tabular;
use crate::error::{Error, Result};
use crate::model::{floor_variance, Latent, MStep, Model, Params, SufficientStats};
use crate::rng::Rng;

/// Poisson regression with log-normal overdispersion:
/// `η_i ~ N(βᵀx_i + β₀, σ²)`, `y_i ~ Poisson(e^{η_i})`.
///
/// One latent per observation. With `x̃_i = (x_i, 1)` and `b = (β, β₀)`:
/// chart `θ = (b, log σ²)`, natural `(b, σ)`, statistics
/// `S(η) = (Σ η_i x̃_i, Σ η_i²)`. The M-step is the least-squares fit
/// `b̂ = (X̃ᵀX̃)⁺ s₁`, `σ̂² = (s₂ − b̂ᵀs₁) / n`.
#[derive(Debug, Clone)]
pub struct PoissonLogNormalModel {
    x: Design,
    y: Vec<f64>,
    gram: DMatrix<f64>,
    gram_pinv: DMatrix<f64>,
}

impl PoissonLogNormalModel {
    pub fn new(x: Design, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.n {
            return Err(Error::Dimension { what: "responses", expected: x.n, got: y.len() });
        }
        if x.n == 0 {
            return Err(Error::Data("no observations".into()));
        }
        if let Some(bad) = y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::Data(format!("count response must be a nonnegative integer, got {bad}")));
        }
        let p = x.d + 1;
        let mut gram = DMatrix::zeros(p, p);
        let mut row = DVector::zeros(p);
        for i in 0..x.n {
            row.rows_mut(0, x.d).copy_from_slice(x.row(i));
            row[x.d] = 1.0;
            gram.ger(1.0, &row, &row, 1.0);
        }
        let gram_pinv = gram
            .clone()
            .pseudo_inverse(1e-10 * gram.norm())
            .map_err(|e| Error::Data(format!("design Gram matrix: {e}")))?;
        Ok(Self { x, y, gram, gram_pinv })
    }

    pub fn from_tabular(t: &Tabular) -> Result<Self> {
        Self::new(Design::from_tabular(t), t.y.clone())
    }

    pub fn n_coefficients(&self) -> usize {
        self.x.d + 1
    }

    pub fn design(&self) -> &Design {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    /// Prior mean `x̃_iᵀb` of `η_i`.
    pub fn linear_predictor(&self, i: usize, theta: &Params) -> f64 {
        self.x.dot_row(i, &theta[..self.x.d]) + theta[self.x.d]
    }

    /// `log p(y_i | η_i)` including `−log y_i!`.
    pub fn log_likelihood(&self, i: usize, eta: f64) -> f64 {
        self.y[i] * eta - eta.exp() - ln_factorial(self.y[i])
    }

    /// `log p(η_i | θ)` including its normalizing constant.
    pub fn log_prior(&self, i: usize, eta: f64, theta: &Params) -> f64 {
        let lv = theta[self.x.d + 1];
        let r = eta - self.linear_predictor(i, theta);
        -0.5 * r * r * (-lv).exp() - 0.5 * (lv + LN_2PI)
    }
}

impl Model for PoissonLogNormalModel {
    fn latent_dim(&self) -> usize {
        self.x.n
    }
    fn stat_dim(&self) -> usize {
        self.x.d + 2
    }
    fn param_dim(&self) -> usize {
        self.x.d + 2
    }
    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.x.d).map(|j| format!("beta_{j}")).collect();
        names.push("beta_0".into());
        names.push("sigma".into());
        names
    }
    fn n_units(&self) -> usize {
        self.x.n
    }
    fn unit_range(&self, unit: usize) -> std::ops::Range<usize> {
        unit..unit + 1
    }

    fn suff_stats(&self, z: &[f64]) -> SufficientStats {
        let d = self.x.d;
        let mut s = vec![0.0; d + 2];
        for (i, &eta) in z.iter().enumerate() {
            self.x.axpy_row(i, eta, &mut s[..d]);
            s[d] += eta;
            s[d + 1] += eta * eta;
        }
        SufficientStats(s)
    }

    fn unit_log_joint(&self, unit: usize, z: &[f64], theta: &Params) -> f64 {
        let eta = z[0];
        let lv = theta[self.x.d + 1];
        let r = eta - self.linear_predictor(unit, theta);
        self.y[unit] * eta - eta.exp() - 0.5 * r * r * (-lv).exp() - 0.5 * lv
    }

    fn unit_log_joint_grad(&self, unit: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        let eta = z[0];
        let lv = theta[self.x.d + 1];
        let r = eta - self.linear_predictor(unit, theta);
        let rate = eta.exp();
        grad[0] = self.y[unit] - rate - r * (-lv).exp();
        self.y[unit] * eta - rate - 0.5 * r * r * (-lv).exp() - 0.5 * lv
    }

    fn m_step(&self, s: &SufficientStats) -> Result<MStep> {
        let d = self.x.d;
        let s1 = DVector::from_column_slice(&s[..d + 1]);
        let b = &self.gram_pinv * &s1;
        let mut clamped = false;
        let var = floor_variance((s[d + 1] - b.dot(&s1)) / self.x.n as f64, &mut clamped);
        let mut p: Vec<f64> = b.iter().copied().collect();
        p.push(var.ln());
        Ok(MStep { params: Params(p), clamped })
    }

    fn objective(&self, s: &SufficientStats, theta: &Params) -> f64 {
        let d = self.x.d;
        let b = DVector::from_column_slice(&theta[..d + 1]);
        let s1 = DVector::from_column_slice(&s[..d + 1]);
        let quad = s[d + 1] - 2.0 * b.dot(&s1) + b.dot(&(&self.gram * &b));
        let lv = theta[d + 1];
        -0.5 * quad * (-lv).exp() - 0.5 * self.x.n as f64 * lv
    }

    fn stats_for_params(&self, theta: &Params) -> SufficientStats {
        let d = self.x.d;
        let b = DVector::from_column_slice(&theta[..d + 1]);
        let s1 = &self.gram * &b;
        let mut s: Vec<f64> = s1.iter().copied().collect();
        s.push(self.x.n as f64 * theta[d + 1].exp() + b.dot(&s1));
        SufficientStats(s)
    }

    fn natural_params(&self, theta: &Params) -> Vec<f64> {
        let d = self.x.d;
        let mut p = theta[..d + 1].to_vec();
        p.push((0.5 * theta[d + 1]).exp());
        p
    }

    fn chart_params(&self, natural: &[f64]) -> Result<Params> {
        let d = self.x.d;
        if natural.len() != d + 2 {
            return Err(Error::Dimension { what: "parameters", expected: d + 2, got: natural.len() });
        }
        let sigma = natural[d + 1];
        if !(sigma > 0.0) {
            return Err(Error::Constraint { name: "sigma".into(), reason: format!("must be positive, got {sigma}") });
        }
        let mut p = natural[..d + 1].to_vec();
        p.push(2.0 * sigma.ln());
        Ok(Params(p))
    }

    /// `η_i = log(y_i + 1/2)`.
    fn initial_latent(&self, _theta: &Params, _rng: &mut Rng) -> Latent {
        Latent(self.y.iter().map(|y| (y + 0.5).ln()).collect())
    }
}
