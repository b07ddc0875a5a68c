//! Property-based invariants shared by the `invariants` test target and the
//! acceptance runner. Every suite uses a deterministic proptest runner.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use saem_core::data::{
    gen_synthetic_ard, gen_synthetic_logistic, gen_synthetic_poisson, split, theophylline, unit_count, Dataset, SplitSpec,
};
use saem_core::eval::log_mean_exp;
use saem_core::mcmc::{run_chain, DiagonalGaussian, KernelConfig};
use saem_core::model::check_gradient;
use saem_core::models::{
    ArdLogisticModel, ConjugateGaussianOracle, LogisticGaussianModel, PkForm, PoissonLogNormalModel, TheophyllineModel,
};
use saem_core::par::Execution;
use saem_core::rng;
use saem_core::saem::{run_saem_from_params, sa_update, GammaSchedule, SaemConfig};
use saem_core::{Latent, Model, Params, SufficientStats};

pub struct Suite {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "gradients", run: gradients },
    Suite { name: "m_step_optimality", run: m_step_optimality },
    Suite { name: "chart_round_trip", run: chart_round_trip },
    Suite { name: "saem_determinism", run: saem_determinism },
    Suite { name: "split_disjointness", run: split_disjointness },
    Suite { name: "gamma_schedule_shape", run: gamma_schedule_shape },
    Suite { name: "sa_update_convexity", run: sa_update_convexity },
    Suite { name: "kernels", run: kernels },
    Suite { name: "log_mean_exp_bounds", run: log_mean_exp_bounds },
];

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

/// Small instances of every model, keyed by a name for failure messages.
fn models() -> Vec<(&'static str, Box<dyn Model>)> {
    let logistic = gen_synthetic_logistic(40, 5, 10.0, (1.0, 0.5), 11).unwrap().dataset;
    let poisson = gen_synthetic_poisson(30, &[0.3, -0.3], 1.0, 0.5, 12).unwrap();
    let (ard, _) = gen_synthetic_ard(40, 5, 2, 13).unwrap();
    let theo = theophylline();
    vec![
        ("oracle", Box::new(ConjugateGaussianOracle::synthetic(20, 5, 0.3, 0.5, 14).unwrap())),
        ("logistic", Box::new(LogisticGaussianModel::from_tabular(logistic.as_tabular().unwrap()).unwrap())),
        ("poisson", Box::new(PoissonLogNormalModel::from_tabular(poisson.as_tabular().unwrap()).unwrap())),
        ("ard", Box::new(ArdLogisticModel::from_tabular(ard.as_tabular().unwrap()).unwrap())),
        ("theophylline", Box::new(TheophyllineModel::new(&theo, PkForm::Standard).unwrap())),
        ("theophylline-printed", Box::new(TheophyllineModel::new(&theo, PkForm::AsPrinted).unwrap())),
    ]
}

/// Latent state and chart parameters drawn around moderate values.
fn point(model: &dyn Model, seed: u64, spread: f64) -> (Vec<f64>, Params) {
    let mut r = rng::stream(seed);
    let z: Vec<f64> = (0..model.latent_dim()).map(|_| 0.5 * rng::normal(&mut r)).collect();
    let theta = model.m_step(&model.suff_stats(&z)).unwrap().params;
    let theta = Params(theta.iter().map(|t| t + spread * rng::normal(&mut r)).collect());
    (z, theta)
}

pub fn gradients() -> Result<(), String> {
    for (name, model) in models() {
        check(24, any::<u64>(), |seed| {
            let (z, theta) = point(model.as_ref(), seed, 0.3);
            let report = check_gradient(model.as_ref(), &z, &theta, 1e-6).map_err(fail)?;
            prop_assert!(
                report.max_rel_error < 1e-4,
                "{name}: relative error {} at coordinate {}",
                report.max_rel_error,
                report.worst_coordinate
            );
            Ok(())
        })?;
    }
    Ok(())
}

pub fn m_step_optimality() -> Result<(), String> {
    for (name, model) in models() {
        let dim = model.param_dim();
        check(24, (any::<u64>(), prop::collection::vec(-0.5..0.5f64, dim)), |(seed, delta)| {
            let (z, _) = point(model.as_ref(), seed, 0.0);
            let s = model.suff_stats(&z);
            let step = model.m_step(&s).map_err(fail)?;
            prop_assume!(!step.clamped);
            let best = model.objective(&s, &step.params);
            let moved = Params(step.params.iter().zip(&delta).map(|(t, d)| t + d).collect());
            let other = model.objective(&s, &moved);
            prop_assert!(other <= best + 1e-9 * (1.0 + best.abs()), "{name}: L(s, θ̂ + δ) = {other} > L(s, θ̂) = {best}");
            Ok(())
        })?;
    }
    Ok(())
}

pub fn chart_round_trip() -> Result<(), String> {
    for (name, model) in models() {
        let dim = model.param_dim();
        check(32, prop::collection::vec(-3.0..3.0f64, dim), |theta| {
            let theta = Params(theta);
            let back = model.chart_params(&model.natural_params(&theta)).map_err(fail)?;
            for (a, b) in back.iter().zip(theta.iter()) {
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{name}: {a} != {b}");
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn saem_determinism() -> Result<(), String> {
    let oracle = ConjugateGaussianOracle::synthetic(30, 5, 0.0, 0.5, 3).unwrap();
    let theo = TheophyllineModel::new(&theophylline(), PkForm::Standard).unwrap();
    let cases: Vec<(&str, &dyn Model, Params, f64)> = vec![
        ("oracle", &oracle, Params(vec![0.0, 0.0]), 0.05),
        ("theophylline", &theo, Params(vec![-1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]), 1e-3),
    ];
    for (name, model, theta0, eta) in cases {
        check(6, (any::<u64>(), any::<bool>()), |(seed, mala)| {
            let kernel = if mala { KernelConfig::mala(eta) } else { KernelConfig::ula(eta) };
            let mut cfg = SaemConfig::new(15, kernel, seed);
            cfg.initial_burn_in = 5;
            let run = |execution| {
                let cfg = SaemConfig { execution, ..cfg.clone() };
                run_saem_from_params(model, &cfg, &theta0).map_err(fail)
            };
            let a = run(Execution::Parallel)?;
            let b = run(Execution::Parallel)?;
            let c = run(Execution::Sequential)?;
            prop_assert_eq!(&a, &b, "{}: repeated runs differ", name);
            prop_assert_eq!(&a, &c, "{}: parallel and sequential runs differ", name);
            Ok(())
        })?;
    }
    Ok(())
}

fn unit_keys(ds: &Dataset) -> Vec<String> {
    match ds {
        Dataset::Longitudinal(l) => l.patients.iter().map(|p| p.id.clone()).collect(),
        Dataset::Tabular(t) => t.unit_ids.clone(),
    }
}

pub fn split_disjointness() -> Result<(), String> {
    let theo = Dataset::Longitudinal(theophylline());
    let mut grouped = gen_synthetic_poisson(60, &[0.2], 0.5, 0.5, 1).unwrap();
    if let Dataset::Tabular(t) = &mut grouped {
        t.unit_ids = (0..60).map(|i| format!("g{}", i / 4)).collect();
    }
    for (name, ds) in [("theophylline", &theo), ("grouped", &grouped)] {
        let n_units = unit_count(ds, false);
        check(48, (any::<u64>(), 1usize..6, 1usize..4), |(seed, a, b)| {
            let spec = SplitSpec::new(a, b);
            let (train, test) = split(ds, &spec, &mut rng::stream(seed)).map_err(fail)?;
            let (tr, te) = (unit_keys(&train), unit_keys(&test));
            prop_assert!(te.iter().all(|u| !tr.contains(u)), "{name}: a unit is on both sides");
            prop_assert_eq!(train.n_rows() + test.n_rows(), ds.n_rows());
            let mut distinct = te.clone();
            distinct.sort();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), spec.n_test(n_units).map_err(fail)?);
            let (train2, test2) = split(ds, &spec, &mut rng::stream(seed)).map_err(fail)?;
            prop_assert!(train2 == train && test2 == test, "{name}: split is not reproducible");
            Ok(())
        })?;
    }
    Ok(())
}

pub fn gamma_schedule_shape() -> Result<(), String> {
    check(64, 0.5001..=1.0f64, |exponent| {
        let schedule = GammaSchedule::Power { exponent };
        schedule.validate(5000).map_err(fail)?;
        prop_assert_eq!(schedule.gamma(1), 1.0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for k in 1..=5000 {
            let g = schedule.gamma(k);
            prop_assert!(g > 0.0 && g <= 1.0);
            prop_assert!(k == 1 || g <= schedule.gamma(k - 1));
            prop_assert!(((k as f64).powf(-exponent) - g).abs() < 1e-15);
            sum += g;
            sum_sq += g * g;
        }
        // Integral bounds: Σγ grows without bound, Σγ² stays below 1 + 1/(2a − 1).
        let lower = if exponent == 1.0 { 5001f64.ln() } else { (5001f64.powf(1.0 - exponent) - 1.0) / (1.0 - exponent) };
        prop_assert!(sum >= lower);
        prop_assert!(sum_sq <= 1.0 + 1.0 / (2.0 * exponent - 1.0));
        Ok(())
    })?;
    check(16, 1.0001..4.0f64, |value| {
        let schedule = GammaSchedule::Constant { value };
        prop_assert!(schedule.validate(10).is_err());
        Ok(())
    })
}

pub fn sa_update_convexity() -> Result<(), String> {
    let strategy = (1usize..8).prop_flat_map(|d| {
        (prop::collection::vec(-1e3..1e3f64, d), prop::collection::vec(-1e3..1e3f64, d), 0.0..=1.0f64)
    });
    check(128, strategy, |(s, stat, gamma)| {
        let (s, stat) = (SufficientStats(s), SufficientStats(stat));
        let next = sa_update(&s, &stat, gamma).map_err(fail)?;
        for ((n, a), b) in next.iter().zip(s.iter()).zip(stat.iter()) {
            let (lo, hi) = (a.min(*b), a.max(*b));
            prop_assert!(*n >= lo - 1e-9 && *n <= hi + 1e-9, "{n} outside [{lo}, {hi}]");
        }
        prop_assert_eq!(sa_update(&s, &stat, 0.0).map_err(fail)?, s.clone());
        prop_assert_eq!(sa_update(&s, &stat, 1.0).map_err(fail)?, stat.clone());
        let short = SufficientStats(vec![0.0; s.len() + 1]);
        prop_assert!(sa_update(&s, &short, gamma).is_err());
        Ok(())
    })
}

pub fn kernels() -> Result<(), String> {
    check(32, (any::<u64>(), 1usize..5, 1e-3..2.0f64, any::<bool>()), |(seed, dim, eta, mala)| {
        let target = DiagonalGaussian::standard(dim);
        let cfg = if mala { KernelConfig::mala(eta) } else { KernelConfig::ula(eta) };
        let start = Latent(vec![0.5; dim]);
        let (a, trace_a) = run_chain(&start, 200, &target, &cfg, &mut rng::stream(seed), true).map_err(fail)?;
        let (b, _) = run_chain(&start, 200, &target, &cfg, &mut rng::stream(seed), false).map_err(fail)?;
        prop_assert_eq!(&a.position, &b.position);
        let trace_a = trace_a.unwrap();
        prop_assert_eq!(trace_a.len(), 200);
        prop_assert!(trace_a.iter().flatten().all(|x| x.is_finite()));
        let rate = a.acceptance_rate().unwrap();
        prop_assert!((0.0..=1.0).contains(&rate));
        prop_assert!(mala || rate == 1.0, "ULA never rejects");
        Ok(())
    })
}

pub fn log_mean_exp_bounds() -> Result<(), String> {
    check(128, (prop::collection::vec(-700.0..700.0f64, 1..50), -100.0..100.0f64), |(xs, shift)| {
        let v = log_mean_exp(&xs);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = xs.len() as f64;
        prop_assert!(v <= max + 1e-9 && v >= max - n.ln() - 1e-9);
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((log_mean_exp(&shifted) - v - shift).abs() < 1e-9 * (1.0 + v.abs()));
        Ok(())
    })
}
