//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p saem-core --test acceptance`.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use saem_core::diagnostics::{batch_means_se, ula_gaussian_bias};
use saem_core::eval::{ais_marginal_lpd, AisConfig, UnitAnnealing};
use saem_core::experiment::{load_config, run_experiment, KernelKind, LoadedConfig, RunOptions, RunSummary};
use saem_core::mcmc::{run_chain, DiagonalGaussian, KernelConfig};
use saem_core::models::{ConjugateGaussianOracle, Group};
use saem_core::rng;
use saem_core::saem::{run_saem_from_params, EStep, SaemConfig};
use saem_core::{Latent, Model, Params};

type Outcome = Result<String, String>;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn run_config(loaded: &LoadedConfig) -> Result<RunSummary, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = RunOptions { output_root: Some(out.path().to_path_buf()), ..Default::default() };
    run_experiment(loaded, &opts).map_err(|e| e.to_string())
}

/// Stationary variance of `x' = (1 − η)x + √(2η) ξ`: `v = (1 − η)² v + 2η`.
fn ula_fixed_point_variance(eta: f64) -> f64 {
    2.0 * eta / (1.0 - (1.0 - eta).powi(2))
}

fn ula_bias() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, eta) in [0.1, 0.5].into_iter().enumerate() {
        let b = ula_gaussian_bias(1.0, eta, 1_000_000, &mut rng::stream(100 + i as u64)).map_err(|e| e.to_string())?;
        let expected = ula_fixed_point_variance(eta);
        let z = (b.empirical - expected).abs() / b.se;
        ok &= z <= 4.0;
        lines.push(format!("eta={eta}: var {:.4} vs {expected:.4} ({z:.2} SE)", b.empirical));
    }
    verdict(ok, lines.join("; "))
}

fn mala_exactness() -> Outcome {
    let target = DiagonalGaussian::standard(1);
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, eta) in [0.01, 0.1].into_iter().enumerate() {
        let cfg = KernelConfig::mala(eta);
        let mut r = rng::stream(200 + i as u64);
        let (burned, _) = run_chain(&Latent(vec![0.0]), 10_000, &target, &cfg, &mut r, false).map_err(|e| e.to_string())?;
        let (_, trace) = run_chain(&Latent(burned.position), 100_000, &target, &cfg, &mut r, true).map_err(|e| e.to_string())?;
        let xs: Vec<f64> = trace.unwrap().into_iter().map(|p| p[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let var = sq.iter().sum::<f64>() / n;
        let (z_mean, z_var) = (mean.abs() / batch_means_se(&xs, 50), (var - 1.0).abs() / batch_means_se(&sq, 50));
        ok &= z_mean <= 3.0 && z_var <= 3.0;
        lines.push(format!("eta={eta}: mean {mean:.4} ({z_mean:.2} SE), var {var:.4} ({z_var:.2} SE)"));
    }
    verdict(ok, lines.join("; "))
}

fn exact_em_fixed_point() -> Outcome {
    let oracle = ConjugateGaussianOracle::synthetic(100, 10, 0.5, 1.0, 300).map_err(|e| e.to_string())?;
    let theta0 = Params(vec![0.0, 0.0]);
    let em = oracle.em_fixed_point(&theta0, 1e-12, 100_000).map_err(|e| e.to_string())?;
    let em = oracle.natural_params(&em);
    let mut errors = Vec::new();
    for seed in 0..5 {
        let mut cfg = SaemConfig::new(2000, KernelConfig::ula(0.1), rng::derive_seed(301, seed));
        cfg.e_step = EStep::ExactPosterior;
        cfg.record_trace = false;
        let trace = run_saem_from_params(&oracle, &cfg, &theta0).map_err(|e| e.to_string())?;
        let fin = oracle.natural_params(&trace.final_theta);
        errors.push(fin.iter().zip(&em).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let hits = errors.iter().filter(|e| **e <= 0.05).count();
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.4}")).collect();
    verdict(hits >= 3, format!("max |θ − θ_EM| per seed [{}], {hits}/5 within 0.05", shown.join(", ")))
}

fn bias_floor_monotone() -> Outcome {
    let loaded = load_config(config_path("oracle-bias-sweep")).map_err(|e| e.to_string())?;
    let summary = run_config(&loaded)?;
    let ula = summary.bias.iter().find(|b| b.kernel == KernelKind::Ula).ok_or("no ULA sweep in the summary")?;
    let report = &ula.report;
    let etas = report.etas();
    if etas != [1e-3, 1e-2, 1e-1] || report.seeds.len() != 5 {
        return Err(format!("unexpected sweep grid {etas:?} over {} seeds", report.seeds.len()));
    }
    let monotone = (0..report.seeds.len())
        .filter(|&s| report.rows.windows(2).all(|w| w[1].per_seed[s] >= w[0].per_seed[s]))
        .count();
    let plateaus: Vec<String> = report.rows.iter().map(|r| format!("{:.3e}", r.plateau)).collect();
    verdict(monotone >= 4, format!("mean plateaus [{}], nondecreasing on {monotone}/5 seeds", plateaus.join(", ")))
}

fn figure_one_mechanism() -> Outcome {
    let loaded = load_config(config_path("synthetic-logistic")).map_err(|e| e.to_string())?;
    let summary = run_config(&loaded)?;
    let cell = |k: KernelKind| summary.cells.iter().find(|c| c.kernel == k && c.eta == 5e-3).ok_or("missing cell");
    let (ula, mala) = (cell(KernelKind::Ula)?, cell(KernelKind::Mala)?);
    let mut wins = 0;
    let mut detail = Vec::new();
    for (u, m) in ula.replicates.iter().zip(&mala.replicates) {
        let sigma = |r: &saem_core::experiment::ReplicateOutcome| r.final_theta.get(1).copied().unwrap_or(f64::NAN);
        let (eu, em) = ((sigma(u) - 0.1).abs(), (sigma(m) - 0.1).abs());
        let win = !u.diverged() && m.accept_rate < 0.2 && eu < em;
        wins += win as usize;
        detail.push(format!("{:.3}/{eu:.3}/{em:.3}", m.accept_rate));
    }
    verdict(
        wins * 2 > ula.replicates.len(),
        format!("per seed MALA accept/|σ_ULA − 0.1|/|σ_MALA − 0.1| [{}], {wins}/{} seeds", detail.join(", "), ula.replicates.len()),
    )
}

/// `log N(y; μ1, I + τ²11ᵀ)` by a dense Cholesky factorization.
fn dense_marginal(ys: &[f64], mu: f64, tau2: f64) -> f64 {
    let n = ys.len();
    let cov = DMatrix::from_fn(n, n, |i, j| tau2 + if i == j { 1.0 } else { 0.0 });
    let chol = cov.cholesky().expect("covariance is positive definite");
    let r = DVector::from_iterator(n, ys.iter().map(|y| y - mu));
    let quad = r.dot(&chol.solve(&r));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

fn ais_correctness() -> Outcome {
    let (mu, tau2): (f64, f64) = (0.4, 0.8);
    let mut r = rng::stream(600);
    let z = mu + tau2.sqrt() * rng::normal(&mut r);
    let ys: Vec<f64> = (0..10).map(|_| z + rng::normal(&mut r)).collect();
    let oracle = ConjugateGaussianOracle::new(vec![Group::from_values(&ys)]).map_err(|e| e.to_string())?;
    let theta = Params(vec![mu, tau2.ln()]);
    let cfg = AisConfig { n_weights: 1000, ..AisConfig::default() };
    let est = ais_marginal_lpd(&UnitAnnealing::new(&oracle, 0, &theta), &cfg, &mut rng::stream(601)).map_err(|e| e.to_string())?;
    let exact = dense_marginal(&ys, mu, tau2);
    verdict((est - exact).abs() <= 0.05, format!("AIS {est:.4} vs closed form {exact:.4}"))
}

fn theophylline_end_to_end() -> Outcome {
    let loaded = load_config(config_path("theophylline")).map_err(|e| e.to_string())?;
    let summary = run_config(&loaded)?;
    let finite = summary.cells.iter().flat_map(|c| &c.replicates).any(|r| r.test_lpd.is_some_and(f64::is_finite));
    let mut witnesses = Vec::new();
    let mut table = Vec::new();
    for ula in summary.cells.iter().filter(|c| c.kernel == KernelKind::Ula) {
        let Some(mala) = summary.cells.iter().find(|c| c.kernel == KernelKind::Mala && c.eta == ula.eta) else { continue };
        table.push(format!("{:e}: ULA div {}/{}, MALA acc {:.3}", ula.eta, ula.n_diverged, ula.n_replicates, mala.mean_accept_rate));
        if ula.n_diverged == 0 && mala.mean_accept_rate < 0.05 {
            witnesses.push(format!("{:e}", ula.eta));
        }
    }
    verdict(
        finite && !witnesses.is_empty(),
        format!("finite test LPD: {finite}; [{}]; witness η: [{}]", table.join("; "), witnesses.join(", ")),
    )
}

fn invariant_suites() -> Outcome {
    let mut failed = Vec::new();
    for suite in common::invariants::SUITES {
        if let Err(e) = (suite.run)() {
            failed.push(format!("{}: {e}", suite.name));
        }
    }
    let n = common::invariants::SUITES.len();
    verdict(failed.is_empty(), if failed.is_empty() { format!("{n}/{n} suites") } else { failed.join("; ") })
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { name: "1 ula-analytic-bias", limit: Duration::from_secs(10), run: ula_bias },
    Criterion { name: "2 mala-exactness", limit: Duration::from_secs(5), run: mala_exactness },
    Criterion { name: "3 exact-em-fixed-point", limit: Duration::from_secs(30), run: exact_em_fixed_point },
    Criterion { name: "4 bias-floor-monotone", limit: Duration::from_secs(120), run: bias_floor_monotone },
    Criterion { name: "5 synthetic-logistic-mechanism", limit: Duration::from_secs(180), run: figure_one_mechanism },
    Criterion { name: "6 ais-correctness", limit: Duration::from_secs(30), run: ais_correctness },
    Criterion { name: "7 theophylline-end-to-end", limit: Duration::from_secs(300), run: theophylline_end_to_end },
    Criterion { name: "8 invariant-suites", limit: Duration::from_secs(120), run: invariant_suites },
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for c in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} limit", c.limit)),
            Err(d) => (false, d),
        };
        failures += !pass as usize;
        println!("{} {} ({:.1}s): {detail}", if pass { "PASS" } else { "FAIL" }, c.name, elapsed.as_secs_f64());
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
