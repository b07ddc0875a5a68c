use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ColumnKind, Dataset, ResponseKind, Tabular};
use crate::error::{Error, Result};
use crate::models::logistic;
use crate::rng::{self, Rng};

pub struct SyntheticLogistic {
    pub dataset: Dataset,
    /// Coefficients that generated the responses.
    pub beta: Vec<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    // Fill row-major so the draw order does not depend on nalgebra's layout.
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

fn tabular(x: Vec<f64>, y: Vec<f64>, d: usize, kind: ResponseKind) -> Dataset {
    let n = y.len();
    Dataset::Tabular(Tabular {
        response_name: "y".into(),
        response_kind: kind,
        feature_names: (1..=d).map(|j| format!("x{j}")).collect(),
        column_kinds: vec![ColumnKind::Continuous; d],
        x,
        y,
        unit_ids: (0..n).map(|i| i.to_string()).collect(),
        preprocessing: None,
    })
}

/// Logistic-regression data with an exactly conditioned design whose
/// largest singular value is `√n`. See [`gen_synthetic_logistic_scaled`].
pub fn gen_synthetic_logistic(
    n: usize,
    d: usize,
    kappa: f64,
    theta_true: (f64, f64),
    seed: u64,
) -> Result<SyntheticLogistic> {
    gen_synthetic_logistic_scaled(n, d, kappa, (n as f64).sqrt(), theta_true, seed)
}

/// Logistic-regression data with an exactly conditioned design.
///
/// `X = U Σ Vᵀ` where `U` (n×d) and `V` (d×d) are random orthonormal bases
/// and the singular values are log-spaced from `sv_max` down to `sv_max / κ`.
/// Coefficients are drawn `β ~ N(μ, σ²)` from `theta_true = (μ, σ)`.
pub fn gen_synthetic_logistic_scaled(
    n: usize,
    d: usize,
    kappa: f64,
    sv_max: f64,
    theta_true: (f64, f64),
    seed: u64,
) -> Result<SyntheticLogistic> {
    if !(sv_max > 0.0 && sv_max.is_finite()) {
        return Err(Error::Domain(format!("largest singular value must be positive, got {sv_max}")));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("condition number must be ≥ 1, got {kappa}")));
    }
    if d < 2 || n < d {
        return Err(Error::Domain(format!("need n ≥ d ≥ 2, got n = {n}, d = {d}")));
    }
    let (mu, sigma) = theta_true;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("prior scale must be positive, got {sigma}")));
    }
    let mut rng = rng::child(seed, rng::tag::DATA);
    let u = gaussian_matrix(n, d, &mut rng).qr().q();
    let v = gaussian_matrix(d, d, &mut rng).qr().q();
    let sv: Vec<f64> = (0..d).map(|j| sv_max * kappa.powf(-(j as f64) / (d - 1) as f64)).collect();
    let mut us = u;
    for (j, s) in sv.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    let xm = us * v.transpose();

    let prior = Normal::new(mu, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let beta: Vec<f64> = (0..d).map(|_| prior.sample(&mut rng)).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|j| xm[(i, j)]).collect();
        let logit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(if rng.random::<f64>() < logistic(logit) { 1.0 } else { 0.0 });
        x.extend(row);
    }
    Ok(SyntheticLogistic { dataset: tabular(x, y, d, ResponseKind::Binary), beta })
}

/// Shape of a count-regression dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoissonShape {
    pub n: usize,
    pub d: usize,
}

impl PoissonShape {
    /// Shape of `medpar` (1495 rows, 6 hyperparameters).
    pub const MEDPAR: PoissonShape = PoissonShape { n: 1495, d: 4 };
    /// Shape of `azpro` (3589 rows, 4 hyperparameters).
    pub const AZPRO: PoissonShape = PoissonShape { n: 3589, d: 2 };

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "medpar" => Some(Self::MEDPAR),
            "azpro" => Some(Self::AZPRO),
            _ => None,
        }
    }
}

/// Poisson-log-normal counts: `η_i ~ N(βᵀx_i + β₀, σ²)`, `y_i ~ Poisson(e^{η_i})`,
/// with standard normal features.
pub fn gen_synthetic_poisson(n: usize, beta: &[f64], beta0: f64, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("σ must be positive, got {sigma}")));
    }
    let d = beta.len();
    let mut rng = rng::child(seed, rng::tag::DATA);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        let eta = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + beta0 + sigma * eps;
        let rate = eta.exp().min(1e6);
        let count = Poisson::new(rate).map_err(|e| Error::Domain(e.to_string()))?.sample(&mut rng);
        y.push(count);
        x.extend(row);
    }
    Ok(tabular(x, y, d, ResponseKind::Count))
}

/// Shape of an ARD logistic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArdShape {
    pub n: usize,
    pub d: usize,
}

impl ArdShape {
    pub const PHISHING: ArdShape = ArdShape { n: 11054, d: 67 };
    pub const GERMAN: ArdShape = ArdShape { n: 1000, d: 216 };
    pub const CARAVAN: ArdShape = ArdShape { n: 9822, d: 619 };

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "phishing" => Some(Self::PHISHING),
            "german" => Some(Self::GERMAN),
            "caravan" => Some(Self::CARAVAN),
            _ => None,
        }
    }
}

/// Logistic data where only the first `n_active` of `d` coefficients are
/// nonzero (drawn `N(0, 2²)`); the remaining coefficients are exactly 0.
pub fn gen_synthetic_ard(n: usize, d: usize, n_active: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    if n_active > d {
        return Err(Error::Domain(format!("n_active = {n_active} exceeds d = {d}")));
    }
    let mut rng = rng::child(seed, rng::tag::DATA);
    let beta: Vec<f64> = (0..d)
        .map(|j| if j < n_active { 2.0 * rng::normal(&mut rng) } else { 0.0 })
        .collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let logit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(if rng.random::<f64>() < logistic(logit) { 1.0 } else { 0.0 });
        x.extend(row);
    }
    Ok((tabular(x, y, d, ResponseKind::Binary), beta))
}
