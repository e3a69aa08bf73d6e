use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::run::{CandidateRow, CycleRecord, ExperimentRecord};
use crate::error::{Error, Result};

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub index: usize,
    pub seed: u64,
    pub alpha: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
    /// Constant-mode radius.
    pub radius: f64,
    pub aggregate_rmse: f64,
    pub diverged: bool,
}

impl SummaryRow {
    pub fn new(index: usize, cfg: &ExperimentConfig, record: &ExperimentRecord) -> Self {
        Self {
            index,
            seed: cfg.seed,
            alpha: cfg.filter.inflation,
            prior_mean: cfg.localization.prior_mean(),
            prior_var: cfg.localization.prior_variance,
            radius: cfg.localization.radius,
            aggregate_rmse: record.aggregate_rmse,
            diverged: record.diverged,
        }
    }

    /// Completed without divergence and with a finite aggregate.
    pub fn is_usable(&self) -> bool {
        !self.diverged && self.aggregate_rmse.is_finite()
    }
}

/// NaN is written as an empty field.
fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse_num(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))
}

fn parse_int<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("not an integer: {s:?}")))
}

/// `cycle, time, rmse_analysis, rmse_forecast, radius_1..radius_g, cost,
/// iters, initial_cost`.
pub fn write_run_csv(path: &Path, record: &ExperimentRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cycle".to_string(), "time".into(), "rmse_analysis".into(), "rmse_forecast".into()];
    header.extend((1..=record.groups).map(|j| format!("radius_{j}")));
    header.extend(["cost".into(), "iters".into(), "initial_cost".into()]);
    w.write_record(&header)?;
    for c in &record.cycles {
        let mut row = vec![c.cycle.to_string(), num(c.time), num(c.rmse_analysis), num(c.rmse_forecast)];
        row.extend(c.radii.iter().map(|&r| num(r)));
        row.extend([num(c.cost), c.iters.to_string(), num(c.initial_cost)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_csv(path: &Path) -> Result<Vec<CycleRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let groups = header.iter().filter(|h| h.starts_with("radius_")).count();
    if header.len() != groups + 7 {
        return Err(Error::InvalidArgument(format!("unexpected run header: {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| parse_num(&row[i]);
        out.push(CycleRecord {
            cycle: parse_int(&row[0])?,
            time: f(1)?,
            rmse_analysis: f(2)?,
            rmse_forecast: f(3)?,
            radii: (0..groups).map(|j| f(4 + j)).collect::<Result<_>>()?,
            cost: f(4 + groups)?,
            iters: parse_int(&row[5 + groups])?,
            initial_cost: f(6 + groups)?,
        });
    }
    Ok(out)
}

/// Aggregate RMSE from per-cycle analysis RMSEs after `spinup` cycles.
pub fn aggregate_from_cycles(cycles: &[CycleRecord], spinup: usize) -> Result<f64> {
    let tail = cycles.get(spinup..).unwrap_or(&[]);
    if tail.is_empty() {
        return Err(Error::InvalidArgument("no post-spin-up cycles".into()));
    }
    let s: f64 = tail.iter().map(|c| c.rmse_analysis * c.rmse_analysis).sum();
    Ok((s / tail.len() as f64).sqrt())
}

const SUMMARY_HEADER: [&str; 8] = [
    "index", "seed", "alpha", "prior_mean", "prior_var", "radius", "aggregate_rmse", "diverged",
];

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.seed.to_string(),
            num(r.alpha),
            num(r.prior_mean),
            num(r.prior_var),
            num(r.radius),
            num(r.aggregate_rmse),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(SUMMARY_HEADER) {
        return Err(Error::InvalidArgument("unexpected summary header".into()));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push(SummaryRow {
            index: parse_int(&row[0])?,
            seed: parse_int(&row[1])?,
            alpha: parse_num(&row[2])?,
            prior_mean: parse_num(&row[3])?,
            prior_var: parse_num(&row[4])?,
            radius: parse_num(&row[5])?,
            aggregate_rmse: parse_num(&row[6])?,
            diverged: parse_int(&row[7])?,
        });
    }
    Ok(out)
}

/// Lowest usable aggregate RMSE per inflation, in order of first appearance;
/// ties go to the lower index. Inflations with no usable run are omitted.
pub fn best_per_alpha(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut best: Vec<SummaryRow> = Vec::new();
    let mut seen: Vec<f64> = Vec::new();
    for r in rows {
        if !seen.contains(&r.alpha) {
            seen.push(r.alpha);
        }
        if !r.is_usable() {
            continue;
        }
        match best.iter_mut().find(|b| b.alpha == r.alpha) {
            Some(b) if r.aggregate_rmse < b.aggregate_rmse => *b = r.clone(),
            Some(_) => {}
            None => best.push(r.clone()),
        }
    }
    best.sort_by_key(|b| seen.iter().position(|&a| a == b.alpha));
    best
}

pub fn write_candidates_csv(path: &Path, rows: &[CandidateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cycle", "radius", "rmse"])?;
    for r in rows {
        w.write_record([r.cycle.to_string(), num(r.radius), r.rmse.map(num).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// The resolved config, loadable again as an experiment config.
pub fn write_manifest(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::write(path, cfg.to_toml_string()?)?;
    Ok(())
}

/// `run.csv`, `summary.csv` and `manifest.toml` for a single run, plus
/// `oracle_candidates.csv` when the record holds an oracle scan.
pub fn write_run_outputs(dir: &Path, cfg: &ExperimentConfig, record: &ExperimentRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_run_csv(&dir.join("run.csv"), record)?;
    write_summary_csv(&dir.join("summary.csv"), &[SummaryRow::new(0, cfg, record)])?;
    write_manifest(&dir.join("manifest.toml"), cfg)?;
    if !record.oracle_candidates.is_empty() {
        write_candidates_csv(&dir.join("oracle_candidates.csv"), &record.oracle_candidates)?;
    }
    Ok(())
}
