use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::{cost_and_grad_3d, CostContext, CostEvaluation};
use crate::denkf::ForecastProducts;
use crate::ensemble::{Observation, ObservationOperator};
use crate::error::{dim_err, Error, Result};
use crate::localization::RadiiVector;
use crate::models::{propagate, ModelSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FdScheme {
    #[default]
    OneSided,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FourDSettings {
    /// Number of future observation windows; zero gives the 3D cost.
    pub k: usize,
    /// Step `h_j = rel_step · max(1, υ_j)`.
    pub rel_step: f64,
    pub scheme: FdScheme,
}

impl Default for FourDSettings {
    fn default() -> Self {
        Self {
            k: 0,
            rel_step: 1e-4,
            scheme: FdScheme::OneSided,
        }
    }
}

/// Model and observations over the windows following the analysis time.
pub struct FutureWindows<'a, M: ModelSystem + ?Sized> {
    pub model: &'a M,
    pub h: &'a ObservationOperator,
    /// `future[k]` is observed at `t0 + (k + 1)·window`.
    pub observations: &'a [Observation],
    pub t0: f64,
    pub window: f64,
}

/// `Σ_e Σ_k ½‖y_k − H x_e(t0 + k·window)‖²_{R⁻¹}` for members forecast from
/// the analysis built with `upsilon`.
pub fn future_penalty<M: ModelSystem + ?Sized>(
    upsilon: &RadiiVector,
    ctx: &CostContext<'_>,
    products: &ForecastProducts,
    k: usize,
    windows: &FutureWindows<'_, M>,
) -> Result<f64> {
    if windows.observations.len() < k {
        return Err(dim_err(format!(
            "{k} future windows requested, {} available",
            windows.observations.len()
        )));
    }
    let radii = ctx.spec.groups.prolong(upsilon)?;
    let rows = ctx.geometry.rho_state_obs(ctx.spec, &radii)?;
    let block = ctx.geometry.rho_obs(ctx.spec, &radii)?;
    let mut ens = products.analyze(&rows, &block)?.analysis;
    let mut penalty = 0.0;
    for step in 0..k {
        let t_start = windows.t0 + step as f64 * windows.window;
        ens = propagate(windows.model, &ens, t_start, t_start + windows.window)?;
        let obs = &windows.observations[step];
        let hx = windows.h.project_rows(ens.members())?;
        for e in 0..hx.ncols() {
            for a in 0..hx.nrows() {
                let r = obs.values[a] - hx[(a, e)];
                penalty += 0.5 * r * r / obs.variances[a];
            }
        }
    }
    Ok(penalty)
}

/// 3D cost plus the future-window penalty; the penalty gradient is a finite
/// difference per group. `k = 0` returns the 3D evaluation untouched.
pub fn cost_grad_4d<M: ModelSystem + ?Sized>(
    upsilon: &RadiiVector,
    ctx: &CostContext<'_>,
    products: &ForecastProducts,
    fourd: &FourDSettings,
    windows: &FutureWindows<'_, M>,
) -> Result<CostEvaluation> {
    let mut eval = cost_and_grad_3d(upsilon, ctx)?;
    if fourd.k == 0 {
        return Ok(eval);
    }
    if !(fourd.rel_step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    let base = future_penalty(upsilon, ctx, products, fourd.k, windows)?;
    let fd = penalty_gradient(upsilon, ctx, products, fourd, windows, base)?;
    eval.future_fit = base;
    eval.value += base;
    if let Some(g) = eval.gradient.as_mut() {
        *g += fd;
    }
    Ok(eval)
}

/// Finite-difference gradient of the future penalty at `upsilon`, given its
/// value `base` there.
pub fn penalty_gradient<M: ModelSystem + ?Sized>(
    upsilon: &RadiiVector,
    ctx: &CostContext<'_>,
    products: &ForecastProducts,
    fourd: &FourDSettings,
    windows: &FutureWindows<'_, M>,
    base: f64,
) -> Result<DVector<f64>> {
    let shifted = |j: usize, delta: f64| -> Result<f64> {
        let mut v = upsilon.as_slice().to_vec();
        v[j] += delta;
        future_penalty(&RadiiVector::new(v)?, ctx, products, fourd.k, windows)
    };
    let parts: Vec<Result<f64>> = (0..upsilon.len())
        .into_par_iter()
        .map(|j| {
            let h = fourd.rel_step * upsilon.as_slice()[j].max(1.0);
            match fourd.scheme {
                FdScheme::OneSided => Ok((shifted(j, h)? - base) / h),
                FdScheme::Central => {
                    // stay inside the feasible region on the low side
                    let lo = h.min(upsilon.as_slice()[j] - ctx.lower_bound).max(0.0);
                    Ok((shifted(j, h)? - shifted(j, -lo)?) / (h + lo))
                }
            }
        })
        .collect();
    let values = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}
