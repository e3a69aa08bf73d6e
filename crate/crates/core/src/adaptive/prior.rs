use nalgebra::DVector;

use crate::error::{dim_err, Error, Result};

/// `(α, β) = (mean²/var, mean/var)`; rejects shapes with `α < 1`.
pub fn prior_to_alpha_beta(mean: f64, variance: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "prior mean and variance must be positive, got {mean} and {variance}"
        )));
    }
    if variance > mean * mean {
        return Err(Error::PriorShape { mean, variance });
    }
    Ok((mean * mean / variance, mean / variance))
}

/// Independent gamma priors on the group radii.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPrior {
    means: Vec<f64>,
    variances: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl GammaPrior {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() || means.is_empty() {
            return Err(dim_err("prior means and variances must be nonempty and equal length"));
        }
        let (alpha, beta) = means
            .iter()
            .zip(&variances)
            .map(|(&m, &v)| prior_to_alpha_beta(m, v))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self {
            means,
            variances,
            alpha,
            beta,
        })
    }

    pub fn uniform(groups: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean; groups], vec![variance; groups])
    }

    pub fn groups(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `Σ_j β_j υ_j − (α_j − 1) ln υ_j`.
    pub fn term(&self, upsilon: &[f64]) -> f64 {
        upsilon
            .iter()
            .zip(self.alpha.iter().zip(&self.beta))
            .map(|(&u, (&a, &b))| {
                // α = 1 drops the log so the term stays finite at any υ > 0
                if a == 1.0 {
                    b * u
                } else {
                    b * u - (a - 1.0) * u.ln()
                }
            })
            .sum()
    }

    pub fn gradient(&self, upsilon: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            upsilon.len(),
            upsilon
                .iter()
                .zip(self.alpha.iter().zip(&self.beta))
                .map(|(&u, (&a, &b))| b - (a - 1.0) / u),
        )
    }

    /// Minimizer of the prior term, `(α − 1)/β` per group.
    pub fn mode(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| (a - 1.0) / b)
            .collect()
    }
}
