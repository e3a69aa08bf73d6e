//! Truth-aware radius selection.
//!
//! Each cycle the oracle picks the radii whose analysis mean lies closest to
//! the truth. It is greedy per cycle and is only available in twin
//! experiments.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denkf::ForecastProducts;
use crate::error::{dim_err, Error, Result};
use crate::localization::{LocalizationGeometry, LocalizationSpec, RadiiVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// One radius for every component, chosen by exhaustive scan.
    #[default]
    Univariate,
    /// One radius per group, by coordinate descent from the univariate pick.
    Multivariate,
}

/// Candidate grid and search mode.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSearchSpec {
    mode: OracleMode,
    grid: Vec<f64>,
    sweeps: usize,
}

impl OracleSearchSpec {
    /// `grid` must be nonempty, strictly ascending and positive.
    pub fn new(mode: OracleMode, grid: Vec<f64>, sweeps: usize) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("oracle grid is empty".into()));
        }
        if grid.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument("oracle radii must be positive".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("oracle grid must be ascending".into()));
        }
        if sweeps == 0 {
            return Err(Error::InvalidArgument("coordinate descent needs ≥ 1 sweep".into()));
        }
        Ok(Self { mode, grid, sweeps })
    }

    /// `min, min + step, …` up to `max` inclusive (within round-off).
    pub fn from_range(mode: OracleMode, min: f64, max: f64, step: f64, sweeps: usize) -> Result<Self> {
        if !(step > 0.0) || !(max >= min) {
            return Err(Error::InvalidArgument(format!(
                "bad oracle range [{min}, {max}] step {step}"
            )));
        }
        let count = ((max - min) / step + 1e-9).floor() as usize + 1;
        let grid = (0..count).map(|i| min + i as f64 * step).collect();
        Self::new(mode, grid, sweeps)
    }

    /// `[0.5, 16]` in steps of 0.5.
    pub fn lorenz(mode: OracleMode) -> Self {
        Self::from_range(mode, 0.5, 16.0, 0.5, 2).expect("valid default grid")
    }

    /// `[5, 45]` in steps of 5.
    pub fn qg(mode: OracleMode) -> Self {
        Self::from_range(mode, 5.0, 45.0, 5.0, 2).expect("valid default grid")
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }
}

/// RMSE of the univariate candidate `radius`; `None` when its analysis
/// failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCandidate {
    pub radius: f64,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    /// Group radii.
    pub upsilon: RadiiVector,
    /// Per-component radii.
    pub radii: Vec<f64>,
    /// Analysis-mean RMSE against the truth at the selection.
    pub rmse: f64,
    /// The univariate scan, in grid order.
    pub candidates: Vec<OracleCandidate>,
    pub evaluations: usize,
}

/// Root mean square of `a − b`.
pub fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// Analysis-mean RMSE against `truth` for per-component `radii`.
pub fn candidate_rmse(
    truth: &DVector<f64>,
    products: &ForecastProducts,
    geometry: &LocalizationGeometry,
    spec: &LocalizationSpec,
    radii: &[f64],
) -> Result<f64> {
    let rows = geometry.rho_state_obs(spec, radii)?;
    let block = geometry.rho_obs(spec, radii)?;
    let mean = products.analysis_mean(&rows, &block)?;
    let e = rmse(&mean, truth);
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::NonFiniteCost)
    }
}

/// Per-cycle oracle choice for the forecast summarized by `products`.
pub fn oracle_select(
    truth: &DVector<f64>,
    products: &ForecastProducts,
    geometry: &LocalizationGeometry,
    spec: &LocalizationSpec,
    search: &OracleSearchSpec,
) -> Result<OracleSelection> {
    let n = geometry.state_dim();
    if truth.len() != n || products.state_dim() != n {
        return Err(dim_err("truth, forecast and geometry disagree on state dimension"));
    }
    let groups = spec.groups.groups();
    let eval = |ups: &[f64]| -> Option<f64> {
        let radii = RadiiVector::new(ups.to_vec()).ok()?;
        let full = spec.groups.prolong(&radii).ok()?;
        candidate_rmse(truth, products, geometry, spec, &full).ok()
    };

    let candidates: Vec<OracleCandidate> = search
        .grid
        .par_iter()
        .map(|&r| OracleCandidate {
            radius: r,
            rmse: eval(&vec![r; groups]),
        })
        .collect();
    let mut evaluations = candidates.len();
    let (best_r, mut best) = argmin(candidates.iter().map(|c| (c.radius, c.rmse)))
        .ok_or(Error::OracleExhausted)?;
    let mut upsilon = vec![best_r; groups];

    if search.mode == OracleMode::Multivariate && groups > 1 {
        for _ in 0..search.sweeps {
            let mut improved = false;
            for j in 0..groups {
                let scan: Vec<(f64, Option<f64>)> = search
                    .grid
                    .par_iter()
                    .map(|&r| {
                        let mut trial = upsilon.clone();
                        trial[j] = r;
                        (r, eval(&trial))
                    })
                    .collect();
                evaluations += scan.len();
                if let Some((r, v)) = argmin(scan.into_iter()) {
                    if v < best {
                        upsilon[j] = r;
                        best = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    let upsilon = RadiiVector::new(upsilon)?;
    let radii = spec.groups.prolong(&upsilon)?;
    Ok(OracleSelection {
        upsilon,
        radii,
        rmse: best,
        candidates,
        evaluations,
    })
}

/// First strict minimum in iteration order, so ties go to the smaller radius
/// on an ascending grid.
fn argmin(items: impl Iterator<Item = (f64, Option<f64>)>) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for (r, v) in items {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((r, v));
            }
        }
    }
    best
}
