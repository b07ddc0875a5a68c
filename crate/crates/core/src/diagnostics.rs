//! Stepsize-bias instrumentation: plateaus of the mean-field residual under
//! SAEM and the stationary variance of ULA on a Gaussian.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{advance, DiagonalGaussian, KernelConfig, KernelState};
use crate::model::{Model, Params};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};
use crate::saem::{run_saem_from_params, SaemConfig, Trace};

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let size = xs.len() / n_batches.max(1);
    if size == 0 || n_batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = xs.chunks_exact(size).take(n_batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBias {
    pub empirical: f64,
    pub analytic: f64,
    /// Batch-means standard error of `empirical`.
    pub se: f64,
}

impl GaussianBias {
    /// `|empirical − analytic|` in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.analytic).abs() / self.se
    }
}

/// Long-run ULA variance on `N(0, σ²)` against `σ² / (1 − η/(2σ²))`.
///
/// The chain starts at 0 and discards its first `n_steps / 100` steps.
pub fn ula_gaussian_bias(sigma2: f64, eta: f64, n_steps: usize, rng: &mut Rng) -> Result<GaussianBias> {
    if !(sigma2 > 0.0) || !(eta > 0.0) {
        return Err(Error::Domain(format!("σ² and η must be positive, got σ² = {sigma2}, η = {eta}")));
    }
    if eta >= 2.0 * sigma2 {
        return Err(Error::Domain(format!("η = {eta} ≥ 2σ² = {}: the ULA recursion is unstable", 2.0 * sigma2)));
    }
    if n_steps < 1000 {
        return Err(Error::Domain(format!("need at least 1000 steps, got {n_steps}")));
    }
    let target = DiagonalGaussian { mean: vec![0.0], var: vec![sigma2] };
    let cfg = KernelConfig::ula(eta);
    let mut state = KernelState::new(vec![0.0], &cfg);
    advance(&mut state, &target, &cfg, rng, n_steps / 100, |_| {})?;
    let mut xs = Vec::with_capacity(n_steps);
    advance(&mut state, &target, &cfg, rng, n_steps, |s| xs.push(s.position[0]))?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let empirical = sq.iter().sum::<f64>() / n;
    Ok(GaussianBias { empirical, analytic: sigma2 / (1.0 - eta / (2.0 * sigma2)), se: batch_means_se(&sq, 50) })
}

/// Per-record `|h(s_k)|²` of a trace.
pub fn residual_sq_series(trace: &Trace) -> Result<Vec<f64>> {
    trace
        .records
        .iter()
        .map(|r| r.h_norm.map(|h| h * h).ok_or(Error::Capability("mean-field residual")))
        .collect()
}

/// Mean `|h(s_k)|²` over the final `window` fraction of the planned
/// iterations; `+∞` when the run diverged.
pub fn plateau(trace: &Trace, n_iterations: usize, window: f64) -> Result<f64> {
    if trace.diverged() {
        return Ok(f64::INFINITY);
    }
    let series = residual_sq_series(trace)?;
    let len = ((n_iterations as f64 * window).ceil() as usize).clamp(1, series.len().max(1));
    let tail = &series[series.len().saturating_sub(len)..];
    if tail.is_empty() {
        return Err(Error::Domain("trace has no records to average".into()));
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub eta: f64,
    /// Mean plateau over seeds.
    pub plateau: f64,
    pub plateau_se: f64,
    pub per_seed: Vec<f64>,
    pub gaussian_bias_emp: Option<f64>,
    pub gaussian_bias_analytic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub window: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<BiasRow>,
    /// Seeds whose plateau sequence is nondecreasing in η.
    pub monotone_seeds: usize,
    /// Fraction of seeds that must be monotone for the verdict.
    pub required_fraction: f64,
    pub monotone: bool,
}

impl BiasReport {
    pub fn etas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eta).collect()
    }

    /// Writes `eta,plateau,plateau_se,gaussian_bias_emp,gaussian_bias_analytic`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eta", "plateau", "plateau_se", "gaussian_bias_emp", "gaussian_bias_analytic"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.eta.to_string(),
                r.plateau.to_string(),
                r.plateau_se.to_string(),
                opt(r.gaussian_bias_emp),
                opt(r.gaussian_bias_analytic),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    /// Fraction of final iterations averaged into the plateau.
    pub window: f64,
    pub n_seeds: usize,
    pub required_fraction: f64,
    /// Steps of the companion Gaussian ULA run per η; 0 skips it.
    pub gaussian_steps: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { window: 0.1, n_seeds: 5, required_fraction: 0.8, gaussian_steps: 1_000_000 }
    }
}

fn is_nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0])
}

/// Runs SAEM at every η of `etas` (ascending) for several seeds and reports
/// the plateau of `|h(s_k)|²` per η together with the monotonicity verdict.
/// Seeds are derived from `template.seed`; runs execute concurrently.
pub fn bias_floor_sweep<M: Model + ?Sized>(
    model: &M,
    theta0: &Params,
    etas: &[f64],
    template: &SaemConfig,
    opts: &SweepOptions,
) -> Result<BiasReport> {
    if etas.is_empty() {
        return Err(Error::Config("η list is empty".into()));
    }
    if !is_nondecreasing(etas) || etas.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("η list must be strictly ascending".into()));
    }
    if !(opts.window > 0.0 && opts.window <= 0.5) {
        return Err(Error::Config(format!("window must lie in (0, 0.5], got {}", opts.window)));
    }
    if opts.n_seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    template.validate()?;
    let seeds: Vec<u64> = (0..opts.n_seeds as u64).map(|i| rng::derive_seed(template.seed, rng::tag::SWEEP + i)).collect();
    let jobs: Vec<(usize, usize)> = (0..etas.len()).flat_map(|e| (0..seeds.len()).map(move |s| (e, s))).collect();
    let inner = if template.execution.is_parallel() { Execution::Sequential } else { template.execution };
    let results = par::map_slice(template.execution, &jobs, |_, &(e, s)| {
        let cfg = SaemConfig {
            seed: seeds[s],
            kernel: KernelConfig { eta: etas[e], ..template.kernel.clone() },
            record_trace: true,
            execution: inner,
            ..template.clone()
        };
        run_saem_from_params(model, &cfg, theta0).and_then(|tr| plateau(&tr, cfg.n_iterations, opts.window))
    });
    let mut grid = vec![vec![0.0; seeds.len()]; etas.len()];
    for (&(e, s), r) in jobs.iter().zip(results) {
        grid[e][s] = r?;
    }
    let monotone_seeds =
        (0..seeds.len()).filter(|&s| is_nondecreasing(&grid.iter().map(|row| row[s]).collect::<Vec<_>>())).count();
    let needed = (opts.required_fraction * seeds.len() as f64).ceil() as usize;
    let rows = etas
        .iter()
        .zip(&grid)
        .enumerate()
        .map(|(i, (&eta, per_seed))| {
            let n = per_seed.len() as f64;
            let mean = per_seed.iter().sum::<f64>() / n;
            let se = if per_seed.len() > 1 && mean.is_finite() {
                (per_seed.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                f64::NAN
            };
            let gauss = (opts.gaussian_steps > 0 && eta < 2.0)
                .then(|| ula_gaussian_bias(1.0, eta, opts.gaussian_steps, &mut rng::child(template.seed, i as u64)))
                .transpose()?;
            Ok(BiasRow {
                eta,
                plateau: mean,
                plateau_se: se,
                per_seed: per_seed.clone(),
                gaussian_bias_emp: gauss.map(|g| g.empirical),
                gaussian_bias_analytic: gauss.map(|g| g.analytic),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        window: opts.window,
        seeds,
        rows,
        monotone_seeds,
        required_fraction: opts.required_fraction,
        monotone: monotone_seeds >= needed,
    })
}
