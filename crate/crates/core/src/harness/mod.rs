//! Twin experiments: truth and observation synthesis, the assimilation
//! loop, parameter sweeps and CSV persistence.
//!
//! Cycle `c` (one-based) forecasts from `(c − 1)·window` to `c·window`,
//! inflates, chooses the taper, analyzes and records. Runs that diverge keep
//! the cycles recorded so far.

mod config;
mod io;
mod run;
mod sweep;
mod twin;

pub use config::{
    EnsembleConfig, ExperimentConfig, FilterConfig, Grouping, LocalizationConfig, LocalizationMode,
    ModelConfig, ObservationConfig, OracleConfig, SeedPolicy, SweepConfig,
};
pub use io::{
    aggregate_from_cycles, best_per_alpha, read_run_csv, read_summary_csv, write_candidates_csv,
    write_manifest, write_run_csv, write_run_outputs, write_summary_csv, SummaryRow,
};
pub use run::{
    compute_rmse, free_run_rmse, free_run_with_twin, oracle_run, oracle_search, run_experiment,
    run_with_twin, CandidateRow, CycleRecord, ExperimentRecord,
};
pub use sweep::{sweep, with_workers, write_sweep_outputs, SweepOutcome};
pub use twin::{
    extra_windows, observation_operator, stream_rng, streams, synthesize_truth_and_obs,
    ExperimentModel, TwinData,
};
