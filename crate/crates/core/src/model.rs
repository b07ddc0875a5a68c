//! Curved-exponential-family latent-variable models.
//!
//! A [`Model`] owns its observations and exposes four things the SAEM driver
//! needs: the sufficient-statistic map `S(z)`, the unnormalized log joint
//! `log p(y, z | θ)` with its gradient in `z`, and the closed-form M-step
//! `θ̂(s)`. Parameters live in a model-defined chart (variances as
//! log-variances), so every real vector of the right length is admissible.

use std::ops::{Deref, Range};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }
    };
}

real_vector!(
    /// Value of the sufficient-statistic vector `s ∈ R^d`.
    SufficientStats
);
real_vector!(
    /// Model parameters in the model's chart.
    Params
);
real_vector!(
    /// Latent variables `z ∈ R^{d_z}`.
    Latent
);

/// Result of an M-step. `clamped` is set when a variance estimate hit the
/// floor and was clamped instead of failing.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub params: Params,
    pub clamped: bool,
}

/// Floor applied to variance-like moments in every M-step.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Clamps a moment to [`VARIANCE_FLOOR`], flagging when it did.
pub(crate) fn floor_variance(v: f64, clamped: &mut bool) -> f64 {
    if v > VARIANCE_FLOOR {
        v
    } else {
        *clamped = true;
        VARIANCE_FLOOR
    }
}

/// A latent-variable model in the curved exponential family.
///
/// The latent vector is split into contiguous *units* whose joint density
/// factorizes given `θ` (patients, observations). Models without such a
/// structure use a single unit spanning the whole latent vector.
///
/// Implementations must be pure: all methods are functions of their
/// arguments, so a model can be shared read-only across threads.
pub trait Model: Sync {
    fn latent_dim(&self) -> usize;
    fn stat_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Names of the natural parameters, in [`Model::natural_params`] order.
    fn param_names(&self) -> Vec<String>;

    fn n_units(&self) -> usize {
        1
    }

    fn unit_range(&self, unit: usize) -> Range<usize> {
        debug_assert_eq!(unit, 0);
        0..self.latent_dim()
    }

    /// `S(y, z)` with the observations fixed at construction.
    fn suff_stats(&self, z: &[f64]) -> SufficientStats;

    /// `log p(y_u, z_u | θ)` for one unit, up to a constant independent of `z`.
    fn unit_log_joint(&self, unit: usize, z: &[f64], theta: &Params) -> f64;

    /// Same value as [`Model::unit_log_joint`], writing `∇_z` into `grad`.
    fn unit_log_joint_grad(&self, unit: usize, z: &[f64], theta: &Params, grad: &mut [f64]) -> f64;

    fn log_joint(&self, z: &[f64], theta: &Params) -> f64 {
        (0..self.n_units())
            .map(|u| self.unit_log_joint(u, &z[self.unit_range(u)], theta))
            .sum()
    }

    fn grad_z_log_joint(&self, z: &[f64], theta: &Params) -> Vec<f64> {
        let mut grad = vec![0.0; z.len()];
        for u in 0..self.n_units() {
            let r = self.unit_range(u);
            self.unit_log_joint_grad(u, &z[r.clone()], theta, &mut grad[r]);
        }
        grad
    }

    /// `θ̂(s)`.
    fn m_step(&self, s: &SufficientStats) -> Result<MStep>;

    /// `L(s, θ) = s·φ(θ) − ψ(θ)`, the function the M-step maximizes.
    fn objective(&self, s: &SufficientStats, theta: &Params) -> f64;

    /// Some `s` with `θ̂(s) = θ`; used to start SAEM from a parameter value.
    fn stats_for_params(&self, theta: &Params) -> SufficientStats;

    fn natural_params(&self, theta: &Params) -> Vec<f64>;

    fn chart_params(&self, natural: &[f64]) -> Result<Params>;

    /// Starting latent state. Standard normal unless the model overrides it.
    fn initial_latent(&self, _theta: &Params, rng: &mut Rng) -> Latent {
        Latent((0..self.latent_dim()).map(|_| StandardNormal.sample(rng)).collect())
    }

    /// Diagonal preconditioner refreshed from the current parameters.
    fn preconditioner(&self, _theta: &Params) -> Option<Vec<f64>> {
        None
    }

    /// `s̄(θ) = E[S(z) | y, θ]`, for models with a tractable posterior.
    fn exact_posterior_mean_stats(&self, _theta: &Params) -> Option<SufficientStats> {
        None
    }

    /// An exact draw from `p(z | y, θ)`, for models with a tractable posterior.
    fn sample_exact_posterior(&self, _theta: &Params, _rng: &mut Rng) -> Option<Latent> {
        None
    }
}

/// Outcome of [`check_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
}

/// Compares the analytic `∇_z log p(y, z | θ)` against central differences
/// with step `h`. The error per coordinate is
/// `|analytic − fd| / (|analytic| + 1e-12)`.
pub fn check_gradient<M: Model + ?Sized>(
    model: &M,
    z: &[f64],
    theta: &Params,
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    if z.len() != model.latent_dim() {
        return Err(Error::Dimension { what: "latent", expected: model.latent_dim(), got: z.len() });
    }
    if !z.iter().chain(theta.iter()).all(|v| v.is_finite()) {
        return Err(Error::Domain("gradient check needs finite z and θ".into()));
    }
    let analytic = model.grad_z_log_joint(z, theta);
    let mut report = GradientReport { max_rel_error: 0.0, worst_coordinate: 0 };
    let mut probe = z.to_vec();
    for i in 0..z.len() {
        probe[i] = z[i] + h;
        let plus = model.log_joint(&probe, theta);
        if !plus.is_finite() {
            return Err(Error::GradientCheck { coordinate: i, side: "plus" });
        }
        probe[i] = z[i] - h;
        let minus = model.log_joint(&probe, theta);
        if !minus.is_finite() {
            return Err(Error::GradientCheck { coordinate: i, side: "minus" });
        }
        probe[i] = z[i];
        let fd = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-12);
        if err > report.max_rel_error {
            report = GradientReport { max_rel_error: err, worst_coordinate: i };
        }
    }
    Ok(report)
}

/// Mean field `h(s) = s̄(θ̂(s)) − s`; zero exactly at EM fixed points.
pub fn mean_field_residual<M: Model + ?Sized>(model: &M, s: &SufficientStats) -> Result<Vec<f64>> {
    let theta = model.m_step(s)?.params;
    let sbar = model
        .exact_posterior_mean_stats(&theta)
        .ok_or(Error::Capability("an exact posterior (mean-field residual)"))?;
    Ok(sbar.iter().zip(s.iter()).map(|(a, b)| a - b).collect())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}


#[cfg(test)]
mod tests {
    use super::testing::Quadratic;
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let m = Quadratic { dim: 5 };
        let z = [0.3, -1.2, 2.5, 0.0, 7.0];
        let r = check_gradient(&m, &z, &Params(vec![0.0]), 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let m = Quadratic { dim: 2 };
        assert!(matches!(
            check_gradient(&m, &[0.0, 0.0], &Params(vec![0.0]), 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn non_finite_joint_names_coordinate() {
        struct Wall;
        impl Model for Wall {
            fn latent_dim(&self) -> usize {
                2
            }
            fn stat_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn param_names(&self) -> Vec<String> {
                vec![]
            }
            fn suff_stats(&self, _: &[f64]) -> SufficientStats {
                SufficientStats(vec![0.0])
            }
            fn unit_log_joint(&self, _: usize, z: &[f64], _: &Params) -> f64 {
                if z[1] > 1.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            fn unit_log_joint_grad(&self, _: usize, _: &[f64], _: &Params, g: &mut [f64]) -> f64 {
                g.fill(0.0);
                0.0
            }
            fn m_step(&self, _: &SufficientStats) -> Result<MStep> {
                unreachable!()
            }
            fn objective(&self, _: &SufficientStats, _: &Params) -> f64 {
                0.0
            }
            fn stats_for_params(&self, _: &Params) -> SufficientStats {
                SufficientStats(vec![0.0])
            }
            fn natural_params(&self, t: &Params) -> Vec<f64> {
                t.0.clone()
            }
            fn chart_params(&self, n: &[f64]) -> Result<Params> {
                Ok(Params(n.to_vec()))
            }
        }
        let err = check_gradient(&Wall, &[0.0, 1.0], &Params(vec![0.0]), 1e-5).unwrap_err();
        assert!(matches!(err, Error::GradientCheck { coordinate: 1, side: "plus" }));
    }

    #[test]
    fn residual_needs_exact_posterior() {
        let m = Quadratic { dim: 1 };
        assert!(matches!(
            mean_field_residual(&m, &SufficientStats(vec![0.0])),
            Err(Error::Capability(_))
        ));
    }
}
