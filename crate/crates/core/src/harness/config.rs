use serde::{Deserialize, Serialize};

use crate::adaptive::{FourDSettings, GammaPrior, OptimizerSettings};
use crate::error::{Error, Result};
use crate::localization::{LocalizationFunction, MeanFunction};
use crate::models::{Lorenz96Config, MultivariateLorenz96Config, QgConfig};
use crate::oracle::OracleMode;

/// Full description of one twin experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub observation: ObservationConfig,
    pub ensemble: EnsembleConfig,
    pub filter: FilterConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelConfig {
    #[serde(rename = "lorenz96")]
    Lorenz96(Lorenz96Config),
    #[serde(rename = "mlorenz96")]
    MultivariateLorenz96(MultivariateLorenz96Config),
    #[serde(rename = "qg")]
    Qg(QgConfig),
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Lorenz96(c) => c.n,
            ModelConfig::MultivariateLorenz96(c) => c.n,
            ModelConfig::Qg(c) => c.grid * c.grid,
        }
    }

    pub fn is_qg(&self) -> bool {
        matches!(self, ModelConfig::Qg(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// One-based observed components. Takes precedence over `stride`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    /// Every `stride`-th component from `offset`; on the QG grid a square
    /// lattice with this spacing in both directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Zero-based first component (per direction on the QG grid) of the
    /// strided network.
    #[serde(default)]
    pub offset: usize,
    /// Observation error variance assumed by the filter.
    pub variance: f64,
    /// Variance of the synthetic noise; defaults to `variance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    /// Model time between observations.
    pub window: f64,
}

impl ObservationConfig {
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance.unwrap_or(self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
    /// Standard deviation of the initial perturbations (Lorenz models);
    /// defaults to the observation standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    /// QG: length of the free run before the truth starts.
    #[serde(default = "default_qg_spinup")]
    pub spinup_time: f64,
    /// QG: initial members are drawn from the last `sample_span` time units
    /// of the spin-up run, at multiples of `sample_interval`.
    #[serde(default = "default_qg_span")]
    pub sample_span: f64,
    #[serde(default = "default_qg_interval")]
    pub sample_interval: f64,
}

fn default_qg_spinup() -> f64 {
    20000.0
}

fn default_qg_span() -> f64 {
    10000.0
}

fn default_qg_interval() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "one")]
    pub inflation: f64,
    /// Number of assimilation cycles.
    pub cycles: usize,
    /// Leading cycles excluded from the aggregate RMSE.
    #[serde(default)]
    pub spinup: usize,
    /// A run diverges once the analysis RMSE exceeds this multiple of the
    /// observation standard deviation.
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
}

fn one() -> f64 {
    1.0
}

fn default_divergence() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LocalizationMode {
    #[default]
    Constant,
    #[serde(rename = "adaptive-3d")]
    Adaptive3d,
    #[serde(rename = "adaptive-4d")]
    Adaptive4d,
    Oracle,
}

impl LocalizationMode {
    pub fn name(self) -> &'static str {
        match self {
            LocalizationMode::Constant => "constant",
            LocalizationMode::Adaptive3d => "adaptive-3d",
            LocalizationMode::Adaptive4d => "adaptive-4d",
            LocalizationMode::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// Component `i` (zero-based) joins group `i mod g`.
    #[default]
    Cyclic,
    /// Contiguous blocks.
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationConfig {
    pub mode: LocalizationMode,
    pub function: LocalizationFunction,
    pub mean: MeanFunction,
    pub groups: usize,
    pub grouping: Grouping,
    /// Constant radius, and the default prior mean.
    pub radius: f64,
    /// Per-group constant radii; overrides `radius` in constant mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<f64>,
    pub prior_variance: f64,
    /// Adaptive modes: cycles run with the prior-mean radius before the
    /// optimizer takes over.
    pub warm_start_cycles: usize,
    pub optimizer: OptimizerSettings,
    pub fourd: FourDSettings,
    pub oracle: OracleConfig,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            mode: LocalizationMode::Constant,
            function: LocalizationFunction::Gauss,
            mean: MeanFunction::Mean,
            groups: 1,
            grouping: Grouping::Cyclic,
            radius: 4.0,
            radii: None,
            prior_mean: None,
            prior_variance: 1.0,
            warm_start_cycles: 0,
            optimizer: OptimizerSettings::default(),
            fourd: FourDSettings::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl LocalizationConfig {
    pub fn prior_mean(&self) -> f64 {
        self.prior_mean.unwrap_or(self.radius)
    }

    /// Per-group radii used in constant mode.
    pub fn constant_radii(&self) -> Vec<f64> {
        self.radii
            .clone()
            .unwrap_or_else(|| vec![self.radius; self.groups])
    }

    pub fn prior(&self) -> Result<GammaPrior> {
        GammaPrior::uniform(self.groups, self.prior_mean(), self.prior_variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub search: OracleMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    pub sweeps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            search: OracleMode::Univariate,
            grid_min: None,
            grid_max: None,
            grid_step: None,
            sweeps: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeedPolicy {
    /// Run `i` uses `seed + i`.
    #[default]
    Offset,
    /// Every run uses `seed`, so all points share truth and noise.
    Shared,
}

/// Lists swept as a Cartesian product; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub inflation: Vec<f64>,
    /// Added to the base prior mean.
    pub prior_mean_offset: Vec<f64>,
    pub prior_variance: Vec<f64>,
    /// Constant-mode radii.
    pub radius: Vec<f64>,
    pub seed_policy: SeedPolicy,
}

/// One-based line of the first line whose text starts with `key`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(key)
                && t[key.len()..]
                    .trim_start()
                    .starts_with(['=', ']', '.'])
        })
        .map(|i| i + 1)
}

fn config_error(text: Option<&str>, key: &str, msg: impl std::fmt::Display) -> Error {
    match text.and_then(|t| line_of(t, key)) {
        Some(line) => Error::Config(format!("line {line}: {key}: {msg}")),
        None => Error::Config(format!("{key}: {msg}")),
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending line when known.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => Error::Config(format!("line {l}: {msg}")),
                None => Error::Config(msg),
            }
        })?;
        cfg.validate_with(Some(text))?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(None)
    }

    fn validate_with(&self, text: Option<&str>) -> Result<()> {
        let err = |key: &str, msg: String| config_error(text, key, msg);
        let n = self.model.dim();
        let obs = &self.observation;
        if !(obs.variance > 0.0) {
            return Err(err("variance", format!("must be > 0, got {}", obs.variance)));
        }
        if obs.noise_variance() < 0.0 {
            return Err(err("noise_variance", "must be ≥ 0".into()));
        }
        if !(obs.window > 0.0) {
            return Err(err("window", "must be > 0".into()));
        }
        if let Some(ix) = &obs.indices {
            if ix.is_empty() || ix.iter().any(|&i| i == 0 || i > n) {
                return Err(err("indices", format!("one-based indices must lie in 1..={n}")));
            }
        }
        if obs.stride == Some(0) {
            return Err(err("stride", "must be ≥ 1".into()));
        }
        let side = match &self.model {
            ModelConfig::Qg(q) => q.grid,
            _ => n,
        };
        if obs.offset >= side {
            return Err(err("offset", format!("must be < {side}")));
        }
        if self.ensemble.size < 2 {
            return Err(err("size", format!("ensemble needs ≥ 2 members, got {}", self.ensemble.size)));
        }
        if let Some(s) = self.ensemble.spread {
            if !(s > 0.0) {
                return Err(err("spread", "must be > 0".into()));
            }
        }
        if self.model.is_qg() {
            let e = &self.ensemble;
            if !(e.spinup_time > 0.0 && e.sample_interval > 0.0 && e.sample_span >= e.sample_interval)
                || e.sample_span > e.spinup_time
            {
                return Err(err(
                    "spinup_time",
                    "need 0 < sample_interval ≤ sample_span ≤ spinup_time".into(),
                ));
            }
        }
        let f = &self.filter;
        if f.cycles == 0 || f.spinup >= f.cycles {
            return Err(err("spinup", format!("need spinup < cycles, got {} and {}", f.spinup, f.cycles)));
        }
        if !(f.inflation >= 1.0) {
            return Err(err("inflation", "must be ≥ 1".into()));
        }
        if !(f.divergence_factor > 0.0) {
            return Err(err("divergence_factor", "must be > 0".into()));
        }
        let loc = &self.localization;
        if loc.groups == 0 || loc.groups > n {
            return Err(err("groups", format!("must lie in 1..={n}")));
        }
        if !(loc.radius > 0.0) {
            return Err(err("radius", "must be > 0".into()));
        }
        if let Some(r) = &loc.radii {
            if r.len() != loc.groups || r.iter().any(|&v| !(v > 0.0)) {
                return Err(err("radii", format!("need {} positive values", loc.groups)));
            }
        }
        let adaptive = matches!(loc.mode, LocalizationMode::Adaptive3d | LocalizationMode::Adaptive4d);
        if adaptive {
            if !loc.mean.is_differentiable() {
                return Err(err(
                    "mean",
                    format!("{} is not differentiable; adaptive modes need mean, sqrt, rms or harm", loc.mean),
                ));
            }
            loc.prior().map_err(|e| err("prior_variance", e.to_string()))?;
            loc.optimizer
                .validate()
                .map_err(|e| err("optimizer", e.to_string()))?;
        }
        if loc.mode == LocalizationMode::Adaptive4d && loc.fourd.k == 0 {
            return Err(err("k", "adaptive-4d needs fourd.k ≥ 1".into()));
        }
        if loc.mode == LocalizationMode::Oracle {
            let o = &loc.oracle;
            for (key, v) in [("grid_min", o.grid_min), ("grid_max", o.grid_max), ("grid_step", o.grid_step)] {
                if matches!(v, Some(x) if !(x > 0.0)) {
                    return Err(err(key, "must be > 0".into()));
                }
            }
            if o.sweeps == 0 {
                return Err(err("sweeps", "must be ≥ 1".into()));
            }
        }
        let s = &self.sweep;
        if s.inflation.iter().any(|&a| !(a >= 1.0)) {
            return Err(err("inflation", "sweep inflation values must be ≥ 1".into()));
        }
        if s.radius.iter().any(|&r| !(r > 0.0)) {
            return Err(err("radius", "sweep radii must be > 0".into()));
        }
        if s.prior_variance.iter().any(|&v| !(v > 0.0)) {
            return Err(err("prior_variance", "sweep variances must be > 0".into()));
        }
        if adaptive {
            for &off in self.sweep_offsets() {
                for &var in self.sweep_variances() {
                    GammaPrior::uniform(1, loc.prior_mean() + off, var)
                        .map_err(|e| err("prior_mean_offset", e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn sweep_offsets(&self) -> &[f64] {
        if self.sweep.prior_mean_offset.is_empty() {
            &[0.0]
        } else {
            &self.sweep.prior_mean_offset
        }
    }

    fn sweep_variances(&self) -> &[f64] {
        if self.sweep.prior_variance.is_empty() {
            std::slice::from_ref(&self.localization.prior_variance)
        } else {
            &self.sweep.prior_variance
        }
    }

    /// Cartesian product of the sweep lists, in row-major order over
    /// (inflation, prior mean offset, prior variance, radius). Each point is a
    /// complete config with its seed assigned.
    pub fn sweep_points(&self) -> Vec<ExperimentConfig> {
        let pick = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
        let inflations = pick(&self.sweep.inflation, self.filter.inflation);
        let offsets = pick(&self.sweep.prior_mean_offset, 0.0);
        let variances = pick(&self.sweep.prior_variance, self.localization.prior_variance);
        let radii = pick(&self.sweep.radius, self.localization.radius);
        let mut out = Vec::new();
        for &a in &inflations {
            for &off in &offsets {
                for &var in &variances {
                    for &r in &radii {
                        let mut c = self.clone();
                        c.sweep = SweepConfig::default();
                        c.filter.inflation = a;
                        c.localization.prior_variance = var;
                        if !self.sweep.radius.is_empty() {
                            c.localization.radius = r;
                            c.localization.radii = None;
                        }
                        c.localization.prior_mean = Some(self.localization.prior_mean() + off);
                        c.seed = match self.sweep.seed_policy {
                            SeedPolicy::Offset => self.seed.wrapping_add(out.len() as u64),
                            SeedPolicy::Shared => self.seed,
                        };
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}
