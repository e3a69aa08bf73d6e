//! Deterministic EnKF analysis with a Schur-localized forecast covariance.
//!
//! The covariance is never formed. Only `P Hᵀ` (`n × m`, from anomalies and
//! their projections) and `H P Hᵀ` (`m × m`) are assembled, each multiplied by
//! the matching block of the taper.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::ensemble::{symmetrize, Ensemble, Observation, ObservationOperator};
use crate::error::{dim_err, Error, Result};

/// `d = y − H x̄`.
pub fn innovation(
    forecast_mean: &DVector<f64>,
    obs: &Observation,
    h: &ObservationOperator,
) -> Result<DVector<f64>> {
    obs.check_operator(h)?;
    Ok(&obs.values - h.project_vector(forecast_mean)?)
}

/// Forecast quantities that live in observation space. Everything here has
/// at most `max(m, N+1)` rows or columns.
#[derive(Debug, Clone)]
pub struct ObsSpaceForecast {
    /// `H X` (`m × N`).
    pub hx: DMatrix<f64>,
    /// Unlocalized `H P Hᵀ` (`m × m`).
    pub hph: DMatrix<f64>,
    /// Innovation `d` (`m`).
    pub innovation: DVector<f64>,
    /// Diagonal of `R`.
    pub obs_variances: DVector<f64>,
}

impl ObsSpaceForecast {
    pub fn new(forecast: &Ensemble, obs: &Observation, h: &ObservationOperator) -> Result<Self> {
        if forecast.dim() != h.state_dim() {
            return Err(dim_err("ensemble and observation operator disagree on n"));
        }
        let d = innovation(forecast.mean(), obs, h)?;
        let hx = h.project_rows(forecast.anomalies()?)?;
        let mut hph = &hx * hx.transpose() / (forecast.size() as f64 - 1.0);
        symmetrize(&mut hph);
        Ok(Self {
            hx,
            hph,
            innovation: d,
            obs_variances: obs.variances.clone(),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.hx.nrows()
    }

    pub fn ensemble_size(&self) -> usize {
        self.hx.ncols()
    }

    /// Factorizes `S = B + R` for a localized `B = H P Hᵀ`.
    pub fn factor_innovation_cov(&self, b: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
        let mut s = b.clone();
        for (a, &r) in self.obs_variances.iter().enumerate() {
            s[(a, a)] += r;
        }
        Cholesky::new(s).ok_or(Error::NotSpd)
    }
}

/// Forecast products needed by the analysis: the observation-space block plus
/// the state-space anomalies and the unlocalized cross covariance `P Hᵀ`.
#[derive(Debug, Clone)]
pub struct ForecastProducts {
    pub obs_space: ObsSpaceForecast,
    pub mean: DVector<f64>,
    pub anomalies: DMatrix<f64>,
    /// Unlocalized `P Hᵀ` (`n × m`).
    pub pht: DMatrix<f64>,
}

impl ForecastProducts {
    pub fn new(forecast: &Ensemble, obs: &Observation, h: &ObservationOperator) -> Result<Self> {
        let obs_space = ObsSpaceForecast::new(forecast, obs, h)?;
        let anomalies = forecast.anomalies()?.clone();
        let pht = &anomalies * obs_space.hx.transpose() / (forecast.size() as f64 - 1.0);
        Ok(Self {
            obs_space,
            mean: forecast.mean().clone(),
            anomalies,
            pht,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean.len()
    }

    /// Analysis mean only; matches the mean of [`ForecastProducts::analyze`]
    /// at a fraction of the cost.
    pub fn analysis_mean(
        &self,
        rho_state_obs: &DMatrix<f64>,
        rho_obs: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        let (n, m) = self.pht.shape();
        if rho_state_obs.shape() != (n, m) || rho_obs.shape() != (m, m) {
            return Err(dim_err("taper blocks do not match the forecast products"));
        }
        let os = &self.obs_space;
        let mut b = rho_obs.component_mul(&os.hph);
        symmetrize(&mut b);
        let chol = os.factor_innovation_cov(&b)?;
        let w = chol.solve(&os.innovation);
        Ok(&self.mean + rho_state_obs.component_mul(&self.pht) * w)
    }

    /// Analysis with taper rows `rho_state_obs` (`n × m`) and observed block
    /// `rho_obs` (`m × m`).
    pub fn analyze(
        &self,
        rho_state_obs: &DMatrix<f64>,
        rho_obs: &DMatrix<f64>,
    ) -> Result<AnalysisOutputs> {
        let (n, m) = self.pht.shape();
        if rho_state_obs.shape() != (n, m) || rho_obs.shape() != (m, m) {
            return Err(dim_err(format!(
                "taper blocks {:?} and {:?} do not match n = {n}, m = {m}",
                rho_state_obs.shape(),
                rho_obs.shape()
            )));
        }
        let os = &self.obs_space;
        let big_n = os.ensemble_size();
        let pht = rho_state_obs.component_mul(&self.pht);
        let mut b = rho_obs.component_mul(&os.hph);
        symmetrize(&mut b);
        let chol = os.factor_innovation_cov(&b)?;

        let mut rhs = DMatrix::zeros(m, big_n + 1);
        rhs.column_mut(0).copy_from(&os.innovation);
        rhs.columns_mut(1, big_n).copy_from(&os.hx);
        let w = chol.solve(&rhs);

        let increment = &pht * w.column(0);
        let mean = &self.mean + &increment;
        let correction = &pht * w.columns(1, big_n);
        let anomalies = &self.anomalies - correction * 0.5;

        let before = self.anomalies.norm();
        let diagnostics = GainDiagnostics {
            mean_increment_norm: increment.norm(),
            anomaly_norm_ratio: if before > 0.0 {
                anomalies.norm() / before
            } else {
                1.0
            },
        };
        Ok(AnalysisOutputs {
            analysis: Ensemble::from_mean_and_anomalies(mean, anomalies)?,
            innovation: os.innovation.clone(),
            diagnostics,
        })
    }
}

/// Borrowed inputs of one analysis.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisInputs<'a> {
    pub forecast: &'a Ensemble,
    pub obs: &'a Observation,
    pub h: &'a ObservationOperator,
    /// Taper rows against observed columns (`n × m`).
    pub rho_state_obs: &'a DMatrix<f64>,
    /// Observed block of the taper (`m × m`).
    pub rho_obs: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainDiagnostics {
    /// `‖x̄ᵃ − x̄ᶠ‖`.
    pub mean_increment_norm: f64,
    /// `‖Xᵃ‖_F / ‖Xᶠ‖_F`.
    pub anomaly_norm_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutputs {
    pub analysis: Ensemble,
    pub innovation: DVector<f64>,
    pub diagnostics: GainDiagnostics,
}

/// Mean updated with the full gain, anomalies with half of it.
pub fn denkf_analysis(inputs: AnalysisInputs<'_>) -> Result<AnalysisOutputs> {
    ForecastProducts::new(inputs.forecast, inputs.obs, inputs.h)?
        .analyze(inputs.rho_state_obs, inputs.rho_obs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_element(r, c, 1.0)
    }

    fn pseudo(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DMatrix::from_fn(r, c, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn innovation_values() {
        let h = ObservationOperator::new(vec![0], 1).unwrap();
        let y = Observation::with_uniform_variance(DVector::from_element(1, 3.0), 1.0).unwrap();
        let d = innovation(&DVector::from_element(1, 1.0), &y, &h).unwrap();
        assert_eq!(d[0], 2.0);

        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let h = ObservationOperator::new(vec![2, 0], 3).unwrap();
        let y = Observation::with_uniform_variance(DVector::from_vec(vec![3.0, 1.0]), 1.0).unwrap();
        assert!(innovation(&x, &y, &h).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_closed_form() {
        // members ±1 about 0 give σ² = 2 with N = 2
        let s = 1.0;
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[s, -s])).unwrap();
        let h = ObservationOperator::identity(1);
        let y = Observation::with_uniform_variance(DVector::from_element(1, 3.0), 1.0).unwrap();
        let out = denkf_analysis(AnalysisInputs {
            forecast: &ens,
            obs: &y,
            h: &h,
            rho_state_obs: &ones(1, 1),
            rho_obs: &ones(1, 1),
        })
        .unwrap();
        assert!((out.analysis.mean()[0] - 2.0).abs() < 1e-14);
        let xa = out.analysis.anomalies().unwrap();
        assert!((xa[(0, 0)] / s - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn huge_obs_error_keeps_forecast() {
        let ens = Ensemble::new(pseudo(3, 5, 4) * 3.0).unwrap();
        let h = ObservationOperator::new(vec![0, 2, 4], 5).unwrap();
        let y = Observation::with_uniform_variance(DVector::from_vec(vec![4.0, -2.0, 1.0]), 1e12)
            .unwrap();
        let out = denkf_analysis(AnalysisInputs {
            forecast: &ens,
            obs: &y,
            h: &h,
            rho_state_obs: &ones(5, 3),
            rho_obs: &ones(3, 3),
        })
        .unwrap();
        let shift = (out.analysis.mean() - ens.mean()).norm();
        assert!(shift <= 1e-6 * out.innovation.norm());
    }

    #[test]
    fn tiny_obs_error_pulls_mean_to_obs() {
        let ens = Ensemble::new(pseudo(9, 3, 6) * 2.0).unwrap();
        let h = ObservationOperator::identity(3);
        let y = Observation::with_uniform_variance(DVector::from_vec(vec![0.3, -0.2, 0.1]), 1e-12)
            .unwrap();
        let out = denkf_analysis(AnalysisInputs {
            forecast: &ens,
            obs: &y,
            h: &h,
            rho_state_obs: &ones(3, 3),
            rho_obs: &ones(3, 3),
        })
        .unwrap();
        for i in 0..3 {
            assert!((out.analysis.mean()[i] - y.values[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn anomaly_sums_stay_zero() {
        let ens = Ensemble::new(pseudo(1, 6, 5)).unwrap();
        let h = ObservationOperator::new(vec![1, 3], 6).unwrap();
        let y = Observation::with_uniform_variance(DVector::from_vec(vec![1.0, -1.0]), 0.5).unwrap();
        let rows = DMatrix::from_fn(6, 2, |i, k| (-((i as f64 - [1.0, 3.0][k]).powi(2)) / 4.0).exp());
        let block = DMatrix::from_fn(2, 2, |a, b| rows[([1, 3][a], b)]);
        let out = denkf_analysis(AnalysisInputs {
            forecast: &ens,
            obs: &y,
            h: &h,
            rho_state_obs: &rows,
            rho_obs: &block,
        })
        .unwrap();
        let members = out.analysis.members();
        let mean = out.analysis.mean();
        for i in 0..6 {
            let s: f64 = members.row(i).iter().map(|v| v - mean[i]).sum();
            assert!(s.abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_mismatched_blocks_and_indefinite_s() {
        let ens = Ensemble::new(pseudo(2, 4, 3)).unwrap();
        let h = ObservationOperator::new(vec![0, 1], 4).unwrap();
        let y = Observation::with_uniform_variance(DVector::zeros(2), 1.0).unwrap();
        let bad = denkf_analysis(AnalysisInputs {
            forecast: &ens,
            obs: &y,
            h: &h,
            rho_state_obs: &ones(3, 2),
            rho_obs: &ones(2, 2),
        });
        assert!(matches!(bad, Err(Error::Dimension(_))));
        let mut neg = ones(2, 2) * -50.0;
        neg[(0, 1)] = 0.0;
        neg[(1, 0)] = 0.0;
        let nonspd = denkf_analysis(AnalysisInputs {
            forecast: &ens,
            obs: &y,
            h: &h,
            rho_state_obs: &ones(4, 2),
            rho_obs: &neg,
        });
        assert!(matches!(nonspd, Err(Error::NotSpd)));
    }

    #[test]
    fn deterministic() {
        let ens = Ensemble::new(pseudo(5, 5, 4)).unwrap();
        let h = ObservationOperator::new(vec![0, 3], 5).unwrap();
        let y = Observation::with_uniform_variance(DVector::from_vec(vec![0.2, 0.4]), 0.7).unwrap();
        let run = || {
            denkf_analysis(AnalysisInputs {
                forecast: &ens,
                obs: &y,
                h: &h,
                rho_state_obs: &ones(5, 2),
                rho_obs: &ones(2, 2),
            })
            .unwrap()
            .analysis
            .into_members()
        };
        assert_eq!(run(), run());
    }
}
