//! Declarative experiments: TOML configs, replicate fan-out and result files.

mod config;
mod run;

pub use config::{
    load_config, parse_config, DataSource, EvalMethod, EvalSection, Experiment, ExperimentConfig, GlmSpec, KernelKind,
    KernelSection, LoadedConfig, OracleSweepSpec, SaemSection, SyntheticLogisticSpec, TheophyllineSpec,
};
pub use run::{
    config_hash, exit_code, run_experiment, validate_config, BiasSummary, CellSummary, ReplicateOutcome, RunOptions,
    RunSummary, ValidationReport, EXIT_ALL_DIVERGED, OUTPUT_ROOT_ENV, SWEEP_HEADER,
};
