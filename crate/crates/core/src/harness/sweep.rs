use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::{ExperimentConfig, SeedPolicy};
use super::io::{best_per_alpha, write_manifest, write_run_csv, write_summary_csv, SummaryRow};
use super::run::{run_with_twin, ExperimentRecord};
use super::twin::{synthesize_truth_and_obs, ExperimentModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Resolved config of each point, in sweep order.
    pub points: Vec<ExperimentConfig>,
    pub records: Vec<ExperimentRecord>,
    pub rows: Vec<SummaryRow>,
}

impl SweepOutcome {
    pub fn best_per_alpha(&self) -> Vec<SummaryRow> {
        best_per_alpha(&self.rows)
    }

    /// True when at least one point finished without diverging.
    pub fn any_usable(&self) -> bool {
        self.rows.iter().any(SummaryRow::is_usable)
    }
}

/// Runs every point of the sweep on `workers` threads. Points are
/// independent; results are ordered by sweep index and do not depend on the
/// worker count. A failure to set up a point (for example a model blow-up
/// while generating its truth) is returned as an error; failures during
/// assimilation mark that point diverged.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let points = cfg.sweep_points();
    let model = ExperimentModel::from_config(&cfg.model)?;
    let records = with_workers(workers, || -> Result<Vec<ExperimentRecord>> {
        match cfg.sweep.seed_policy {
            // Points differ only in filter settings, so they share one twin.
            SeedPolicy::Shared => {
                let twin = synthesize_truth_and_obs(&points[0], &model)?;
                points
                    .par_iter()
                    .map(|p| run_with_twin(p, &model, &twin))
                    .collect()
            }
            SeedPolicy::Offset => points
                .par_iter()
                .map(|p| {
                    let twin = synthesize_truth_and_obs(p, &model)?;
                    run_with_twin(p, &model, &twin)
                })
                .collect(),
        }
    })?;
    let rows = points
        .iter()
        .zip(&records)
        .enumerate()
        .map(|(i, (p, r))| SummaryRow::new(i, p, r))
        .collect();
    Ok(SweepOutcome {
        points,
        records,
        rows,
    })
}

/// Runs `f` on a dedicated pool of `workers` threads (at least one).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?
        .install(f)
}

/// `summary.csv`, `best_per_alpha.csv`, `manifest.toml` and
/// `runs/run_XXXX.csv`.
pub fn write_sweep_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &SweepOutcome) -> Result<()> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs)?;
    write_summary_csv(&dir.join("summary.csv"), &outcome.rows)?;
    write_summary_csv(&dir.join("best_per_alpha.csv"), &outcome.best_per_alpha())?;
    write_manifest(&dir.join("manifest.toml"), cfg)?;
    for (i, rec) in outcome.records.iter().enumerate() {
        write_run_csv(&runs.join(format!("run_{i:04}.csv")), rec)?;
    }
    Ok(())
}
