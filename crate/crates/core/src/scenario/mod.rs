//! Scenario configuration, sweeps, results and trace verification.

mod config;
mod results;
mod sweep;
pub mod verify;

pub use config::{parse_config, ConfigError, Mode, PoolConfig, ScenarioConfig};
pub use results::{mean, AggregateRow, ResultsError, RunRow, SweepResult, CSV_HEADER, MEAN_ID};
pub use sweep::{derive_seeds, run_sweep, run_sweep_with, RunKey, ScenarioSeed, SweepError};
pub use verify::{
    verify_trace, verify_trace_text, Divergence, DivergenceKind, VerifyError, VerifyOptions, VerifyReport,
};
