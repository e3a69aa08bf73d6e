use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ExperimentConfig, LocalizationMode, ModelConfig};
use crate::ensemble::{Ensemble, Observation, ObservationOperator};
use crate::error::{Error, Result};
use crate::models::{integrate, Lorenz96, ModelSystem, QgModel};

/// Random stream identifiers. Each purpose draws from its own ChaCha
/// stream, so changing one never shifts another's draws.
pub mod streams {
    pub const OBSERVATION_NOISE: u64 = 1;
    pub const INITIAL_ENSEMBLE: u64 = 2;
}

/// Generator for `purpose` under `seed`.
pub fn stream_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// The dynamical system selected by a config.
#[derive(Debug, Clone)]
pub enum ExperimentModel {
    Lorenz(Lorenz96),
    Qg(QgModel),
}

impl ExperimentModel {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Lorenz96(c) => ExperimentModel::Lorenz(Lorenz96::new(*c)?),
            ModelConfig::MultivariateLorenz96(c) => {
                ExperimentModel::Lorenz(Lorenz96::multivariate(*c)?)
            }
            ModelConfig::Qg(c) => ExperimentModel::Qg(QgModel::new(*c)?),
        })
    }
}

impl ModelSystem for ExperimentModel {
    fn dim(&self) -> usize {
        match self {
            ExperimentModel::Lorenz(m) => m.dim(),
            ExperimentModel::Qg(m) => m.dim(),
        }
    }

    fn tendency(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            ExperimentModel::Lorenz(m) => m.tendency(t, x, out),
            ExperimentModel::Qg(m) => m.tendency(t, x, out),
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            ExperimentModel::Lorenz(m) => m.distance(i, j),
            ExperimentModel::Qg(m) => m.distance(i, j),
        }
    }

    fn default_timestep(&self) -> f64 {
        match self {
            ExperimentModel::Lorenz(m) => m.default_timestep(),
            ExperimentModel::Qg(m) => m.default_timestep(),
        }
    }
}

/// Observed components: explicit one-based indices, a stride (a square
/// lattice on the QG grid), or everything.
pub fn observation_operator(cfg: &ExperimentConfig) -> Result<ObservationOperator> {
    let n = cfg.model.dim();
    let obs = &cfg.observation;
    if let Some(ix) = &obs.indices {
        return ObservationOperator::from_one_based(ix, n);
    }
    let o = obs.offset;
    let on = |i: usize, s: usize| i >= o && (i - o).is_multiple_of(s);
    match (obs.stride, &cfg.model) {
        (Some(s), ModelConfig::Qg(q)) => {
            let g = q.grid;
            let idx = (0..n).filter(|k| on(k % g, s) && on(k / g, s)).collect();
            ObservationOperator::new(idx, n)
        }
        (Some(s), _) => ObservationOperator::new((o..n).step_by(s).collect(), n),
        (None, _) => Ok(ObservationOperator::identity(n)),
    }
}

/// Truth trajectory, synthetic observations and the initial ensemble.
#[derive(Debug, Clone)]
pub struct TwinData {
    /// `times[c] = c·window`.
    pub times: Vec<f64>,
    /// `truth[c]` is the true state at `times[c]`.
    pub truth: Vec<DVector<f64>>,
    /// `observations[c − 1]` is observed at `times[c]`.
    pub observations: Vec<Observation>,
    pub initial_ensemble: Ensemble,
    pub h: ObservationOperator,
}

/// Windows needed beyond the last cycle (future observations for the
/// time-distributed cost).
pub fn extra_windows(cfg: &ExperimentConfig) -> usize {
    if cfg.localization.mode == LocalizationMode::Adaptive4d {
        cfg.localization.fourd.k
    } else {
        0
    }
}

/// Integrates the truth over `cycles + extra` windows and draws the
/// observations and the initial ensemble. Identical for identical
/// (model, observation, ensemble, cycle) settings and seed.
pub fn synthesize_truth_and_obs(cfg: &ExperimentConfig, model: &ExperimentModel) -> Result<TwinData> {
    let h = observation_operator(cfg)?;
    let total = cfg.filter.cycles + extra_windows(cfg);
    let window = cfg.observation.window;

    let (truth0, pool) = match model {
        ExperimentModel::Lorenz(m) => (m.initial_condition()?, Vec::new()),
        ExperimentModel::Qg(m) => qg_spinup(m, cfg)?,
    };

    let times: Vec<f64> = (0..=total).map(|c| c as f64 * window).collect();
    let mut truth = Vec::with_capacity(total + 1);
    truth.push(truth0);
    for c in 1..=total {
        let next = integrate(model, &truth[c - 1], times[c - 1], times[c])?;
        truth.push(next);
    }

    let mut noise = stream_rng(cfg.seed, streams::OBSERVATION_NOISE);
    let sd = cfg.observation.noise_variance().sqrt();
    let variance = cfg.observation.variance;
    let observations = truth[1..]
        .iter()
        .map(|x| {
            let mut y = h.project_vector(x)?;
            for v in y.iter_mut() {
                let xi: f64 = StandardNormal.sample(&mut noise);
                *v += sd * xi;
            }
            Observation::with_uniform_variance(y, variance)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = stream_rng(cfg.seed, streams::INITIAL_ENSEMBLE);
    let size = cfg.ensemble.size;
    let initial_ensemble = if pool.is_empty() {
        let spread = cfg.ensemble.spread.unwrap_or(variance.sqrt());
        let x0 = &truth[0];
        Ensemble::new(DMatrix::from_fn(x0.len(), size, |i, _| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            x0[i] + spread * xi
        }))?
    } else {
        if pool.len() < size {
            return Err(Error::Config(format!(
                "spin-up sampling offers {} states for {size} members; widen sample_span",
                pool.len()
            )));
        }
        let picks = sample(&mut rng, pool.len(), size);
        let members: Vec<DVector<f64>> = picks.iter().map(|i| pool[i].clone()).collect();
        Ensemble::from_members(&members)?
    };

    Ok(TwinData {
        times,
        truth,
        observations,
        initial_ensemble,
        h,
    })
}

/// Free run from rest. Returns the final state and the snapshots taken every
/// `sample_interval` over the last `sample_span` time units before it.
fn qg_spinup(model: &QgModel, cfg: &ExperimentConfig) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let e = &cfg.ensemble;
    let n = model.dim();
    let count = (e.sample_span / e.sample_interval).floor() as usize;
    let first = e.spinup_time - count as f64 * e.sample_interval;
    let mut state = integrate(model, &DVector::zeros(n), 0.0, first)?;
    let mut t = first;
    let mut pool = Vec::with_capacity(count);
    for _ in 0..count {
        pool.push(state.clone());
        state = integrate(model, &state, t, t + e.sample_interval)?;
        t += e.sample_interval;
    }
    Ok((state, pool))
}
