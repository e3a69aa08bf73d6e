use nalgebra::{DMatrix, DVector};

use super::prior::GammaPrior;
use super::probe;
use crate::denkf::ObsSpaceForecast;
use crate::ensemble::symmetrize;
use crate::error::{dim_err, Error, Result};
use crate::localization::{LocalizationGeometry, LocalizationSpec, RadiiVector};

/// Everything the 3D cost needs besides the radii.
#[derive(Debug, Clone, Copy)]
pub struct CostContext<'a> {
    pub obs_space: &'a ObsSpaceForecast,
    pub geometry: &'a LocalizationGeometry,
    pub spec: &'a LocalizationSpec,
    pub prior: &'a GammaPrior,
    /// Smallest admissible radius.
    pub lower_bound: f64,
}

/// Cost value, its additive terms and optionally the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEvaluation {
    pub value: f64,
    pub forecast_fit: f64,
    pub obs_fit: f64,
    pub prior: f64,
    /// Misfit against future windows; zero for the 3D cost.
    pub future_fit: f64,
    pub gradient: Option<DVector<f64>>,
}

impl CostEvaluation {
    pub fn terms_sum(&self) -> f64 {
        self.forecast_fit + self.obs_fit + self.prior + self.future_fit
    }
}

impl CostContext<'_> {
    fn check(&self, upsilon: &RadiiVector) -> Result<Vec<f64>> {
        let g = self.spec.groups.groups();
        if upsilon.len() != g || self.prior.groups() != g {
            return Err(dim_err(format!(
                "{} radii and {} priors for {g} groups",
                upsilon.len(),
                self.prior.groups()
            )));
        }
        if let Some(&bad) = upsilon.as_slice().iter().find(|&&u| u < self.lower_bound) {
            return Err(Error::BelowBound {
                value: bad,
                bound: self.lower_bound,
            });
        }
        if self.obs_space.obs_dim() != self.geometry.obs_dim() {
            return Err(dim_err("observation-space forecast does not match geometry"));
        }
        self.spec.groups.prolong(upsilon)
    }
}

/// 3D MAP cost at `upsilon`, without the gradient.
pub fn cost_3d(upsilon: &RadiiVector, ctx: &CostContext<'_>) -> Result<CostEvaluation> {
    evaluate(upsilon, ctx, false)
}

/// Analytic gradient of [`cost_3d`].
pub fn grad_3d(upsilon: &RadiiVector, ctx: &CostContext<'_>) -> Result<DVector<f64>> {
    Ok(evaluate(upsilon, ctx, true)?
        .gradient
        .expect("gradient requested"))
}

/// Value and gradient sharing one factorization.
pub fn cost_and_grad_3d(upsilon: &RadiiVector, ctx: &CostContext<'_>) -> Result<CostEvaluation> {
    evaluate(upsilon, ctx, true)
}

fn record(m: &DMatrix<f64>) {
    probe::record(m.nrows(), m.ncols());
}

fn evaluate(
    upsilon: &RadiiVector,
    ctx: &CostContext<'_>,
    with_gradient: bool,
) -> Result<CostEvaluation> {
    if with_gradient && !ctx.spec.mean.is_differentiable() {
        return Err(Error::NonDifferentiable(ctx.spec.mean.name().into()));
    }
    let radii = ctx.check(upsilon)?;
    let os = ctx.obs_space;
    let (m, big_n) = os.hx.shape();

    let rho = ctx.geometry.rho_obs(ctx.spec, &radii)?;
    record(&rho);
    let mut b = rho.component_mul(&os.hph);
    symmetrize(&mut b);
    record(&b);
    let chol = os.factor_innovation_cov(&b)?;

    // z_e = d − ½ HX_e,  u_e = S⁻¹ z_e
    let mut z = &os.hx * -0.5;
    for mut col in z.column_iter_mut() {
        col += &os.innovation;
    }
    record(&z);
    let u = chol.solve(&z);
    let bu = &b * &u;
    record(&bu);

    // g_e = d − HX_e − B u_e
    let mut g = -&os.hx - &bu;
    for mut col in g.column_iter_mut() {
        col += &os.innovation;
    }
    record(&g);

    let forecast_fit = 0.5 * u.dot(&bu);
    let mut obs_fit = 0.0;
    for e in 0..big_n {
        for a in 0..m {
            let v = g[(a, e)];
            obs_fit += v * v / os.obs_variances[a];
        }
    }
    obs_fit *= 0.5;
    let prior = ctx.prior.term(upsilon.as_slice());
    let value = forecast_fit + obs_fit + prior;

    let gradient = if with_gradient {
        // ∂J/∂υ_j = Σ B'_j ∘ M + prior', with M = Σ_e u_e (½u_e − S⁻¹Bu_e − S⁻¹g_e)ᵀ
        let w = chol.solve(&(&bu + &g));
        let mut right = &u * 0.5 - w;
        record(&right);
        right = right.transpose();
        let weights = &u * right;
        record(&weights);
        let mut grad = ctx.prior.gradient(upsilon.as_slice());
        for j in 0..upsilon.len() {
            let drho = ctx.geometry.drho_obs(ctx.spec, upsilon, j)?;
            record(&drho);
            let mut s = 0.0;
            for (idx, (&dr, &p)) in drho.iter().zip(os.hph.iter()).enumerate() {
                if dr != 0.0 {
                    s += dr * p * weights[idx];
                }
            }
            grad[j] += s;
        }
        Some(grad)
    } else {
        None
    };

    Ok(CostEvaluation {
        value,
        forecast_fit,
        obs_fit,
        prior,
        future_fit: 0.0,
        gradient,
    })
}
