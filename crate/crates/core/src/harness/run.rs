use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::config::{ExperimentConfig, Grouping, LocalizationMode};
use super::twin::{synthesize_truth_and_obs, ExperimentModel, TwinData};
use crate::adaptive::{adaptive_cycle, FutureWindows};
use crate::denkf::ForecastProducts;
use crate::ensemble::Ensemble;
use crate::error::{dim_err, Error, Result};
use crate::localization::{GroupMapping, LocalizationGeometry, LocalizationSpec, RadiiVector};
use crate::models::propagate;
use crate::oracle::{oracle_select, rmse, OracleCandidate, OracleSearchSpec};

/// One assimilation cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    /// One-based cycle number.
    pub cycle: usize,
    pub time: f64,
    pub rmse_analysis: f64,
    pub rmse_forecast: f64,
    /// Group radii used for the analysis.
    pub radii: Vec<f64>,
    /// Adaptive modes: cost at the selected radii. Oracle mode: the
    /// achieved analysis RMSE. NaN otherwise.
    pub cost: f64,
    /// Adaptive modes: cost at the prior means. NaN otherwise.
    pub initial_cost: f64,
    /// Optimizer iterations, or oracle evaluations.
    pub iters: usize,
}

/// Oracle scan entry for one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateRow {
    pub cycle: usize,
    pub radius: f64,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub groups: usize,
    /// Leading cycles excluded from the aggregate.
    pub spinup: usize,
    pub cycles: Vec<CycleRecord>,
    /// True state at each recorded cycle.
    pub truth: Vec<DVector<f64>>,
    /// Analysis mean at each recorded cycle.
    pub analysis_means: Vec<DVector<f64>>,
    /// RMSE over the recorded post-spin-up cycles; NaN when there are none.
    pub aggregate_rmse: f64,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub oracle_candidates: Vec<CandidateRow>,
}

impl ExperimentRecord {
    /// Recomputes the aggregate from the stored traces.
    pub fn recompute_aggregate(&self) -> Result<f64> {
        compute_rmse(&self.truth, &self.analysis_means, self.spinup..self.truth.len())
    }
}

/// `sqrt(Σ_t Σ_i (truth − analysis)² / (n·n_t))` over the trace indices in
/// `window`.
pub fn compute_rmse(
    truth: &[DVector<f64>],
    analysis: &[DVector<f64>],
    window: Range<usize>,
) -> Result<f64> {
    if truth.len() != analysis.len() {
        return Err(dim_err(format!(
            "traces have lengths {} and {}",
            truth.len(),
            analysis.len()
        )));
    }
    if window.is_empty() || window.end > truth.len() {
        return Err(Error::InvalidArgument(format!(
            "RMSE window {window:?} is empty or exceeds {} entries",
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in window {
        let (x, a) = (&truth[t], &analysis[t]);
        if x.len() != a.len() {
            return Err(dim_err("trace entries differ in length"));
        }
        sum += (x - a).norm_squared();
        count += x.len();
    }
    Ok((sum / count as f64).sqrt())
}

pub(crate) fn localization_spec(cfg: &ExperimentConfig) -> Result<LocalizationSpec> {
    let n = cfg.model.dim();
    let g = cfg.localization.groups;
    let groups = match cfg.localization.grouping {
        Grouping::Cyclic => GroupMapping::cyclic(n, g)?,
        Grouping::Block => GroupMapping::blocks(n, g)?,
    };
    Ok(LocalizationSpec {
        function: cfg.localization.function,
        mean: cfg.localization.mean,
        groups,
    })
}

/// Oracle grid from the config, defaulting by model family.
pub fn oracle_search(cfg: &ExperimentConfig) -> Result<OracleSearchSpec> {
    let o = &cfg.localization.oracle;
    let (min, max, step) = if cfg.model.is_qg() {
        (5.0, 45.0, 5.0)
    } else {
        (0.5, 16.0, 0.5)
    };
    OracleSearchSpec::from_range(
        o.search,
        o.grid_min.unwrap_or(min),
        o.grid_max.unwrap_or(max),
        o.grid_step.unwrap_or(step),
        o.sweeps,
    )
}

/// Runs the twin experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let model = ExperimentModel::from_config(&cfg.model)?;
    let twin = synthesize_truth_and_obs(cfg, &model)?;
    run_with_twin(cfg, &model, &twin)
}

/// Runs the oracle baseline; errors unless the config is in oracle mode.
pub fn oracle_run(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    if cfg.localization.mode != LocalizationMode::Oracle {
        return Err(Error::Config(format!(
            "oracle run needs localization mode \"oracle\", got \"{}\"",
            cfg.localization.mode.name()
        )));
    }
    run_experiment(cfg)
}

enum Selector {
    Fixed {
        radii: Vec<f64>,
        rows: DMatrix<f64>,
        block: DMatrix<f64>,
    },
    Adaptive,
    Oracle(OracleSearchSpec),
}

struct Choice {
    rows: DMatrix<f64>,
    block: DMatrix<f64>,
    radii: Vec<f64>,
    cost: f64,
    initial_cost: f64,
    iters: usize,
}

/// Assimilation loop over pre-synthesized twin data.
pub fn run_with_twin(
    cfg: &ExperimentConfig,
    model: &ExperimentModel,
    twin: &TwinData,
) -> Result<ExperimentRecord> {
    let loc = &cfg.localization;
    let spec = localization_spec(cfg)?;
    let geometry = LocalizationGeometry::new(model, &twin.h)?;
    let prior = loc.prior();
    let fixed = |radii: Vec<f64>| -> Result<Selector> {
        let full = spec.groups.prolong(&RadiiVector::new(radii.clone())?)?;
        Ok(Selector::Fixed {
            rows: geometry.rho_state_obs(&spec, &full)?,
            block: geometry.rho_obs(&spec, &full)?,
            radii,
        })
    };
    let selector = match loc.mode {
        LocalizationMode::Constant => fixed(loc.constant_radii())?,
        LocalizationMode::Adaptive3d | LocalizationMode::Adaptive4d => Selector::Adaptive,
        LocalizationMode::Oracle => Selector::Oracle(oracle_search(cfg)?),
    };
    let warm = match loc.mode {
        LocalizationMode::Adaptive3d | LocalizationMode::Adaptive4d if loc.warm_start_cycles > 0 => {
            Some(fixed(vec![loc.prior_mean(); loc.groups])?)
        }
        _ => None,
    };
    let prior = match &selector {
        Selector::Adaptive => Some(prior?),
        _ => None,
    };
    let fourd = (loc.mode == LocalizationMode::Adaptive4d).then_some(&loc.fourd);

    let threshold = cfg.filter.divergence_factor * cfg.observation.variance.sqrt();
    let mut record = ExperimentRecord {
        seed: cfg.seed,
        groups: loc.groups,
        spinup: cfg.filter.spinup,
        cycles: Vec::with_capacity(cfg.filter.cycles),
        truth: Vec::with_capacity(cfg.filter.cycles),
        analysis_means: Vec::with_capacity(cfg.filter.cycles),
        aggregate_rmse: f64::NAN,
        diverged: false,
        divergence: None,
        oracle_candidates: Vec::new(),
    };

    let mut ens = twin.initial_ensemble.clone();
    for c in 1..=cfg.filter.cycles {
        let (t0, t1) = (twin.times[c - 1], twin.times[c]);
        let truth = &twin.truth[c];
        let step = || -> Result<(Ensemble, f64, Choice, Option<Vec<OracleCandidate>>)> {
            let forecast = propagate(model, &ens, t0, t1)?.inflate(cfg.filter.inflation)?;
            let rmse_forecast = rmse(forecast.mean(), truth);
            let products = ForecastProducts::new(&forecast, &twin.observations[c - 1], &twin.h)?;
            let active = match (&warm, c <= loc.warm_start_cycles) {
                (Some(w), true) => w,
                _ => &selector,
            };
            let mut candidates = None;
            let choice = match active {
                Selector::Fixed { radii, rows, block } => Choice {
                    rows: rows.clone(),
                    block: block.clone(),
                    radii: radii.clone(),
                    cost: f64::NAN,
                    initial_cost: f64::NAN,
                    iters: 0,
                },
                Selector::Adaptive => {
                    let windows = FutureWindows {
                        model,
                        h: &twin.h,
                        observations: &twin.observations[c..],
                        t0: t1,
                        window: cfg.observation.window,
                    };
                    let pick = adaptive_cycle(
                        prior.as_ref().expect("adaptive prior"),
                        &products,
                        &geometry,
                        &spec,
                        &loc.optimizer,
                        fourd.map(|f| (f, &windows)),
                    )?;
                    Choice {
                        rows: pick.rho_state_obs,
                        block: pick.rho_obs,
                        radii: pick.report.upsilon.as_slice().to_vec(),
                        cost: pick.report.value,
                        initial_cost: pick.report.initial_value,
                        iters: pick.report.iterations,
                    }
                }
                Selector::Oracle(search) => {
                    let sel = oracle_select(truth, &products, &geometry, &spec, search)?;
                    candidates = Some(sel.candidates);
                    Choice {
                        rows: geometry.rho_state_obs(&spec, &sel.radii)?,
                        block: geometry.rho_obs(&spec, &sel.radii)?,
                        radii: sel.upsilon.into_vec(),
                        cost: sel.rmse,
                        initial_cost: f64::NAN,
                        iters: sel.evaluations,
                    }
                }
            };
            let analysis = products.analyze(&choice.rows, &choice.block)?.analysis;
            Ok((analysis, rmse_forecast, choice, candidates))
        };
        match step() {
            Ok((analysis, rmse_forecast, choice, candidates)) => {
                let rmse_analysis = rmse(analysis.mean(), truth);
                if let Some(list) = candidates {
                    record.oracle_candidates.extend(list.into_iter().map(|k| CandidateRow {
                        cycle: c,
                        radius: k.radius,
                        rmse: k.rmse,
                    }));
                }
                record.cycles.push(CycleRecord {
                    cycle: c,
                    time: t1,
                    rmse_analysis,
                    rmse_forecast,
                    radii: choice.radii,
                    cost: choice.cost,
                    initial_cost: choice.initial_cost,
                    iters: choice.iters,
                });
                record.truth.push(truth.clone());
                record.analysis_means.push(analysis.mean().clone());
                if !(rmse_analysis <= threshold) {
                    record.diverged = true;
                    record.divergence = Some(format!(
                        "cycle {c}: analysis RMSE {rmse_analysis} exceeds {threshold}"
                    ));
                    break;
                }
                ens = analysis;
            }
            Err(e) => {
                record.diverged = true;
                record.divergence = Some(format!("cycle {c}: {e}"));
                break;
            }
        }
    }
    if record.truth.len() > record.spinup {
        record.aggregate_rmse = record.recompute_aggregate()?;
    }
    Ok(record)
}

/// RMSE of the unassimilated ensemble mean over the post-spin-up cycles.
pub fn free_run_rmse(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.validate()?;
    let model = ExperimentModel::from_config(&cfg.model)?;
    let twin = synthesize_truth_and_obs(cfg, &model)?;
    free_run_with_twin(cfg, &model, &twin)
}

pub fn free_run_with_twin(
    cfg: &ExperimentConfig,
    model: &ExperimentModel,
    twin: &TwinData,
) -> Result<f64> {
    let mut ens = twin.initial_ensemble.clone();
    let mut truth = Vec::new();
    let mut means = Vec::new();
    for c in 1..=cfg.filter.cycles {
        ens = propagate(model, &ens, twin.times[c - 1], twin.times[c])?;
        truth.push(twin.truth[c].clone());
        means.push(ens.mean().clone());
    }
    compute_rmse(&truth, &means, cfg.filter.spinup..truth.len())
}
