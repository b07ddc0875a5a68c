use serde::{Deserialize, Serialize};

use super::LN_2PI;
use crate::data::{Longitudinal, Patient};
use crate::error::{Error, Result};
use crate::model::{floor_variance, Latent, MStep, Model, Params, SufficientStats};
use crate::rng::Rng;

/// Which one-compartment formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PkForm {
    /// `d·ka / (V(ka − Cl)) · (e^{−Cl t / V} − e^{−ka t})`, which has a pole at `ka = Cl`.
    AsPrinted,
    /// The elimination-rate form `d·ka / (V(ka − k)) · (e^{−k t} − e^{−ka t})`, `k = Cl/V`.
    #[default]
    Standard,
}

const POLE_TOLERANCE: f64 = 1e-8;
const SERIES_THRESHOLD: f64 = 1e-3;

/// `q = (e^{−k t} − e^{−a t}) / (a − k)` with its partials `(∂q/∂a, ∂q/∂k)`,
/// switching to a series around `a = k`.
fn q_and_partials(a: f64, k: f64, t: f64) -> (f64, f64, f64) {
    let delta = a - k;
    let x = 0.5 * delta * t;
    if x.abs() * 2.0 < SERIES_THRESHOLD {
        let x2 = x * x;
        let sinhc = 1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0));
        let dsinhc = x / 3.0 * (1.0 + x2 / 10.0 * (1.0 + x2 / 28.0));
        let e = (-0.5 * (a + k) * t).exp();
        let q = t * e * sinhc;
        let tail = 0.5 * t * t * e * dsinhc;
        return (q, -0.5 * t * q + tail, -0.5 * t * q - tail);
    }
    let e1 = (-k * t).exp();
    let e2 = (-a * t).exp();
    let q = (e1 - e2) / delta;
    (q, (t * e2 - q) / delta, (q - t * e1) / delta)
}

/// Concentration and its gradient in `(log V, log ka, log Cl)`.
fn pk_with_grad(v: f64, ka: f64, cl: f64, dose: f64, t: f64, form: PkForm) -> (f64, [f64; 3]) {
    let k = cl / v;
    let c = dose * ka / v;
    if form == PkForm::AsPrinted && (v * (ka - cl)).abs() < POLE_TOLERANCE {
        let h = c * t * (-ka * t).exp();
        return (h, [-h, h * (1.0 - ka * t), 0.0]);
    }
    let (q, qa, qk) = q_and_partials(ka, k, t);
    let (r, dr_la, dr_lc, dr_lv) = match form {
        PkForm::Standard => (1.0, 0.0, 0.0, 0.0),
        PkForm::AsPrinted => {
            let den = ka - cl;
            let r = (ka - k) / den;
            (r, ka * (k - cl) / (den * den), -k / den + cl * (ka - k) / (den * den), k / den)
        }
    };
    let h = c * r * q;
    let d_lv = -h + c * q * dr_lv - c * r * k * qk;
    let d_la = h + c * q * dr_la + c * r * ka * qa;
    let d_lc = c * q * dr_lc + c * r * k * qk;
    (h, [d_lv, d_la, d_lc])
}

/// One-compartment first-order-absorption concentration at time `t`.
pub fn pk_concentration(v: f64, cl: f64, ka: f64, dose: f64, t: f64, form: PkForm) -> Result<f64> {
    if !(v > 0.0) || !(ka > 0.0) {
        return Err(Error::Domain(format!("V and ka must be positive, got V = {v}, ka = {ka}")));
    }
    if !(cl >= 0.0) || !(t >= 0.0) {
        return Err(Error::Domain(format!("Cl and t must be nonnegative, got Cl = {cl}, t = {t}")));
    }
    Ok(pk_with_grad(v, ka, cl, dose, t, form).0)
}

/// Index of each latent coordinate `(log V, log ka, log Cl)` in the
/// parameter order `(ka, V, Cl)`.
const LATENT_TO_PARAM: [usize; 3] = [1, 0, 2];

/// Nonlinear mixed-effects model of theophylline kinetics.
///
/// Per patient `z_i = (log V_i, log ka_i, log Cl_i)` with independent
/// Gaussian priors, and `y_ij ~ N(h(V_i, Cl_i, ka_i, t_ij), σ²)`.
///
/// Chart `θ = (μ_ka, μ_V, μ_Cl, log σ²_ka, log σ²_V, log σ²_Cl, log σ²)`;
/// natural parameters report standard deviations. Statistics
/// `S = (Σz_ka, Σz_V, Σz_Cl, Σz_ka², Σz_V², Σz_Cl², Σ_ij (y_ij − h_ij)²)`.
#[derive(Debug, Clone)]
pub struct TheophyllineModel {
    patients: Vec<Patient>,
    form: PkForm,
    n_obs: usize,
}

impl TheophyllineModel {
    pub fn new(data: &Longitudinal, form: PkForm) -> Result<Self> {
        if data.patients.is_empty() {
            return Err(Error::Data("no patients".into()));
        }
        Ok(Self { patients: data.patients.clone(), form, n_obs: data.n_observations() })
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn form(&self) -> PkForm {
        self.form
    }

    /// Residual sum of squares of patient `i` at latent `z = (log V, log ka, log Cl)`.
    pub fn patient_rss(&self, i: usize, z: &[f64]) -> f64 {
        let p = &self.patients[i];
        let (v, ka, cl) = (z[0].exp(), z[1].exp(), z[2].exp());
        p.times
            .iter()
            .zip(&p.concentrations)
            .map(|(&t, &y)| {
                let r = y - pk_with_grad(v, ka, cl, p.dose, t, self.form).0;
                r * r
            })
            .sum()
    }

    /// `log p(y_i | z_i, θ)` including the normalizing constant.
    pub fn patient_log_likelihood(&self, i: usize, z: &[f64], theta: &Params) -> f64 {
        let n = self.patients[i].times.len() as f64;
        -0.5 * self.patient_rss(i, z) * (-theta[6]).exp() - 0.5 * n * (theta[6] + LN_2PI)
    }

    /// `log p(z_i | θ)` including the normalizing constant.
    pub fn patient_log_prior(&self, z: &[f64], theta: &Params) -> f64 {
        (0..3)
            .map(|c| {
                let j = LATENT_TO_PARAM[c];
                let r = z[c] - theta[j];
                -0.5 * r * r * (-theta[3 + j]).exp() - 0.5 * (theta[3 + j] + LN_2PI)
            })
            .sum()
    }

    /// Gradient of [`Self::patient_log_likelihood`] in `z`, written into `grad`.
    pub fn patient_log_likelihood_grad(&self, i: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        let p = &self.patients[i];
        let (v, ka, cl) = (z[0].exp(), z[1].exp(), z[2].exp());
        let inv_var = (-theta[6]).exp();
        grad[..3].fill(0.0);
        let mut rss = 0.0;
        for (&t, &y) in p.times.iter().zip(&p.concentrations) {
            let (h, dh) = pk_with_grad(v, ka, cl, p.dose, t, self.form);
            let r = y - h;
            rss += r * r;
            for c in 0..3 {
                grad[c] += r * inv_var * dh[c];
            }
        }
        -0.5 * rss * inv_var - 0.5 * p.times.len() as f64 * (theta[6] + LN_2PI)
    }
}

impl Model for TheophyllineModel {
    fn latent_dim(&self) -> usize {
        3 * self.patients.len()
    }
    fn stat_dim(&self) -> usize {
        7
    }
    fn param_dim(&self) -> usize {
        7
    }
    fn param_names(&self) -> Vec<String> {
        ["mu_ka", "mu_V", "mu_Cl", "sigma_ka", "sigma_V", "sigma_Cl", "sigma"].map(String::from).to_vec()
    }
    fn n_units(&self) -> usize {
        self.patients.len()
    }
    fn unit_range(&self, unit: usize) -> std::ops::Range<usize> {
        3 * unit..3 * unit + 3
    }

    fn suff_stats(&self, z: &[f64]) -> SufficientStats {
        let mut s = vec![0.0; 7];
        for (i, zi) in z.chunks_exact(3).enumerate() {
            for c in 0..3 {
                let j = LATENT_TO_PARAM[c];
                s[j] += zi[c];
                s[3 + j] += zi[c] * zi[c];
            }
            s[6] += self.patient_rss(i, zi);
        }
        SufficientStats(s)
    }

    fn unit_log_joint(&self, unit: usize, z: &[f64], theta: &Params) -> f64 {
        self.patient_log_likelihood(unit, z, theta) + self.patient_log_prior(z, theta)
    }

    fn unit_log_joint_grad(&self, unit: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64 {
        let ll = self.patient_log_likelihood_grad(unit, z, theta, grad);
        for c in 0..3 {
            let j = LATENT_TO_PARAM[c];
            grad[c] -= (z[c] - theta[j]) * (-theta[3 + j]).exp();
        }
        ll + self.patient_log_prior(z, theta)
    }

    fn m_step(&self, s: &SufficientStats) -> Result<MStep> {
        let n = self.patients.len() as f64;
        let mut clamped = false;
        let mut p = vec![0.0; 7];
        for j in 0..3 {
            p[j] = s[j] / n;
            p[3 + j] = floor_variance(s[3 + j] / n - p[j] * p[j], &mut clamped).ln();
        }
        p[6] = floor_variance(s[6] / self.n_obs as f64, &mut clamped).ln();
        Ok(MStep { params: Params(p), clamped })
    }

    fn objective(&self, s: &SufficientStats, theta: &Params) -> f64 {
        let n = self.patients.len() as f64;
        let mut l = 0.0;
        for j in 0..3 {
            let mu = theta[j];
            l -= 0.5 * (s[3 + j] - 2.0 * mu * s[j] + n * mu * mu) * (-theta[3 + j]).exp() + 0.5 * n * theta[3 + j];
        }
        l - 0.5 * s[6] * (-theta[6]).exp() - 0.5 * self.n_obs as f64 * theta[6]
    }

    fn stats_for_params(&self, theta: &Params) -> SufficientStats {
        let n = self.patients.len() as f64;
        let mut s = vec![0.0; 7];
        for j in 0..3 {
            s[j] = n * theta[j];
            s[3 + j] = n * (theta[3 + j].exp() + theta[j] * theta[j]);
        }
        s[6] = self.n_obs as f64 * theta[6].exp();
        SufficientStats(s)
    }

    fn natural_params(&self, theta: &Params) -> Vec<f64> {
        (0..7).map(|j| if j < 3 { theta[j] } else { (0.5 * theta[j]).exp() }).collect()
    }

    fn chart_params(&self, natural: &[f64]) -> Result<Params> {
        if natural.len() != 7 {
            return Err(Error::Dimension { what: "parameters", expected: 7, got: natural.len() });
        }
        let names = self.param_names();
        let mut p = natural.to_vec();
        for j in 3..7 {
            if !(natural[j] > 0.0) {
                return Err(Error::Constraint { name: names[j].clone(), reason: format!("must be positive, got {}", natural[j]) });
            }
            p[j] = 2.0 * natural[j].ln();
        }
        Ok(Params(p))
    }

    /// Every patient starts at the prior mean.
    fn initial_latent(&self, theta: &Params, _rng: &mut Rng) -> Latent {
        let unit: Vec<f64> = (0..3).map(|c| theta[LATENT_TO_PARAM[c]]).collect();
        Latent(unit.repeat(self.patients.len()))
    }
}
