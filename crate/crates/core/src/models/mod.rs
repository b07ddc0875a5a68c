//! Concrete models: the four benchmark problems and a conjugate-Gaussian
//! oracle with a tractable posterior.

mod ard;
mod logistic_gaussian;
mod oracle;
mod poisson;
mod theophylline;

pub use ard::{ard_preconditioner, m_step_ard, ArdLogisticModel, ARD_DELTA, INTERCEPT_PRIOR_SD};
pub use logistic_gaussian::{m_step_logistic_gaussian, LogisticGaussianModel};
pub use oracle::{ConjugateGaussianOracle, Group};
pub use poisson::PoissonLogNormalModel;
pub use theophylline::{pk_concentration, PkForm, TheophyllineModel};

use crate::data::Tabular;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of `y ∈ {0,1}` with logit `t`.
#[inline]
pub fn bernoulli_logit_loglik(y: f64, t: f64) -> f64 {
    y * t - softplus(t)
}

/// Row-major dense design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub d: usize,
    pub x: Vec<f64>,
}

impl Design {
    pub fn new(n: usize, d: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != n * d {
            return Err(Error::Dimension { what: "design matrix", expected: n * d, got: x.len() });
        }
        Ok(Self { n, d, x })
    }

    pub fn from_tabular(t: &Tabular) -> Self {
        Self { n: t.n_rows(), d: t.n_features(), x: t.x.clone() }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn dot_row(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// `out += scale · x_i`.
    #[inline]
    pub fn axpy_row(&self, i: usize, scale: f64, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(self.row(i)) {
            *o += scale * a;
        }
    }
}

/// `Σ_i [y_i log p_i + (1 − y_i) log(1 − p_i)]` with `p_i = logistic(βᵀx_i)`,
/// evaluated in the stable `y t − log(1 + e^t)` form.
pub fn logistic_loglik(beta: &[f64], x: &Design, y: &[f64]) -> f64 {
    (0..x.n).map(|i| bernoulli_logit_loglik(y[i], x.dot_row(i, beta))).sum()
}

/// Log-likelihood with intercept and its gradient in `(β, β₀)`.
/// `grad` has length `d + 1`, intercept last.
pub(crate) fn logistic_loglik_grad(beta: &[f64], beta0: f64, x: &Design, y: &[f64], grad: &mut [f64]) -> f64 {
    grad.fill(0.0);
    let (gb, g0) = grad.split_at_mut(x.d);
    let mut ll = 0.0;
    for i in 0..x.n {
        let t = x.dot_row(i, beta) + beta0;
        ll += bernoulli_logit_loglik(y[i], t);
        let r = y[i] - logistic(t);
        x.axpy_row(i, r, gb);
        g0[0] += r;
    }
    ll
}

/// `ln(k!)` for a nonnegative integer-valued `k`.
pub fn ln_factorial(k: f64) -> f64 {
    (2..=(k as u64)).map(|j| (j as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn loglik_at_zero_is_n_log_half() {
        let x = Design::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let ll = logistic_loglik(&[0.0, 0.0], &x, &[1.0, 0.0, 1.0]);
        assert!((ll - 3.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_covariate_ignores_beta() {
        let x = Design::new(1, 2, vec![0.0, 0.0]).unwrap();
        for b in [-40.0, 0.0, 3.0, 900.0] {
            assert!((logistic_loglik(&[b, -b], &x, &[1.0]) - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn stable_form_matches_naive() {
        let mut rng = crate::rng::stream(4);
        for _ in 0..100 {
            let n = 5;
            let d = 3;
            let xs: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
            let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let x = Design::new(n, d, xs).unwrap();
            let naive: f64 = (0..n)
                .map(|i| {
                    let p = 1.0 / (1.0 + (-x.dot_row(i, &beta)).exp());
                    y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln()
                })
                .sum();
            assert!((logistic_loglik(&beta, &x, &y) - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn softplus_extremes() {
        assert!(softplus(1000.0).is_finite());
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn factorials() {
        assert_eq!(ln_factorial(0.0), 0.0);
        assert_eq!(ln_factorial(1.0), 0.0);
        assert!((ln_factorial(5.0) - 120f64.ln()).abs() < 1e-12);
    }
}
