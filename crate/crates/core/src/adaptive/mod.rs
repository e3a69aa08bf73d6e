//! MAP estimation of localization radii under gamma priors.
//!
//! The cost combines the forecast and observation misfits of the analysis
//! that a given set of radii would produce, plus the negative log prior. All
//! of it is evaluated in observation space. The optional time-distributed
//! variant adds the misfit of forecasts launched from that analysis against
//! a few future observation windows.

mod cost;
mod fourd;
mod minimize;
mod prior;
pub mod probe;

pub use cost::{cost_3d, cost_and_grad_3d, grad_3d, CostContext, CostEvaluation};
pub use fourd::{cost_grad_4d, future_penalty, penalty_gradient, FdScheme, FourDSettings, FutureWindows};
pub use minimize::{minimize_with, MinimizeReport, OptimizerSettings, StopReason};
pub use prior::{prior_to_alpha_beta, GammaPrior};

use nalgebra::DMatrix;

use crate::denkf::ForecastProducts;
use crate::error::Result;
use crate::localization::{LocalizationGeometry, LocalizationSpec};
use crate::models::ModelSystem;

/// Minimizes the 3D cost (or the 4D cost when `fourd` is given with
/// `k > 0`) starting from the prior means.
pub fn minimize<M: ModelSystem + ?Sized>(
    settings: &OptimizerSettings,
    ctx: &CostContext<'_>,
    products: &ForecastProducts,
    fourd: Option<(&FourDSettings, &FutureWindows<'_, M>)>,
) -> Result<MinimizeReport> {
    let start = ctx.prior.means().to_vec();
    match fourd {
        Some((fd, windows)) if fd.k > 0 => minimize_with(settings, &start, |u| {
            cost_grad_4d(u, ctx, products, fd, windows)
        }),
        _ => minimize_with(settings, &start, |u| cost_and_grad_3d(u, ctx)),
    }
}

/// Radii chosen for one cycle and the taper blocks they induce.
#[derive(Debug, Clone)]
pub struct AdaptiveChoice {
    /// Per-component radii.
    pub radii: Vec<f64>,
    pub rho_state_obs: DMatrix<f64>,
    pub rho_obs: DMatrix<f64>,
    pub report: MinimizeReport,
}

/// One adaptive selection: optimize the group radii, prolong them and build
/// the taper blocks for the analysis.
pub fn adaptive_cycle<M: ModelSystem + ?Sized>(
    prior: &GammaPrior,
    products: &ForecastProducts,
    geometry: &LocalizationGeometry,
    spec: &LocalizationSpec,
    settings: &OptimizerSettings,
    fourd: Option<(&FourDSettings, &FutureWindows<'_, M>)>,
) -> Result<AdaptiveChoice> {
    let ctx = CostContext {
        obs_space: &products.obs_space,
        geometry,
        spec,
        prior,
        lower_bound: settings.lower_bound,
    };
    let report = minimize(settings, &ctx, products, fourd)?;
    let radii = spec.groups.prolong(&report.upsilon)?;
    let rho_state_obs = geometry.rho_state_obs(spec, &radii)?;
    let rho_obs = geometry.rho_obs(spec, &radii)?;
    Ok(AdaptiveChoice {
        radii,
        rho_state_obs,
        rho_obs,
        report,
    })
}
