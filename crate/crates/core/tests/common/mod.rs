//! Dense reference implementations, written from the textbook formulas with
//! explicit matrices and inverses. Only for small problems.

#![allow(dead_code)]

use adaloc::ensemble::{Ensemble, Observation, ObservationOperator};
use adaloc::localization::MeanFunction;
use adaloc::models::ModelSystem;
use nalgebra::{DMatrix, DVector};

pub fn combine(mean: MeanFunction, a: f64, b: f64) -> f64 {
    match mean {
        MeanFunction::Min => a.min(b),
        MeanFunction::Max => a.max(b),
        MeanFunction::Mean => (a + b) / 2.0,
        MeanFunction::Sqrt => (a * b).sqrt(),
        MeanFunction::Rms => ((a * a + b * b) / 2.0).sqrt(),
        MeanFunction::Harm => {
            if a + b == 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            }
        }
    }
}

/// Full taper by the entry-wise definition.
pub fn dense_rho<M: ModelSystem>(model: &M, mean: MeanFunction, radii: &[f64]) -> DMatrix<f64> {
    let n = model.dim();
    DMatrix::from_fn(n, n, |i, k| {
        let d = model.distance(i, k);
        let li = (-(d / radii[i]).powi(2) / 2.0).exp();
        let lk = (-(d / radii[k]).powi(2) / 2.0).exp();
        combine(mean, li, lk)
    })
}

pub fn sample_cov(ens: &Ensemble) -> DMatrix<f64> {
    let n = ens.dim();
    let big_n = ens.size();
    let x = ens.members();
    let mean = DVector::from_fn(n, |i, _| x.row(i).sum() / big_n as f64);
    let mut p = DMatrix::zeros(n, n);
    for e in 0..big_n {
        let a = x.column(e) - &mean;
        p += &a * a.transpose();
    }
    p / (big_n as f64 - 1.0)
}

pub struct DenseAnalysis {
    pub mean: DVector<f64>,
    pub anomalies: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub p_loc: DMatrix<f64>,
}

/// Mean with the full gain, anomalies with half of it, `K` from explicit
/// inverses of the localized covariance blocks.
pub fn dense_denkf(
    ens: &Ensemble,
    obs: &Observation,
    h: &ObservationOperator,
    rho: &DMatrix<f64>,
) -> DenseAnalysis {
    let hm = h.dense();
    let big_n = ens.size();
    let n = ens.dim();
    let x = ens.members();
    let mean = DVector::from_fn(n, |i, _| x.row(i).sum() / big_n as f64);
    let mut anomalies = x.clone();
    for mut c in anomalies.column_iter_mut() {
        c -= &mean;
    }
    let p_loc = rho.component_mul(&sample_cov(ens));
    let r = DMatrix::from_diagonal(&obs.variances);
    let s = &hm * &p_loc * hm.transpose() + r;
    let gain = &p_loc * hm.transpose() * s.try_inverse().expect("invertible S");
    let d = &obs.values - &hm * &mean;
    let mean_a = &mean + &gain * d;
    let anomalies_a = &anomalies - &gain * &hm * &anomalies * 0.5;
    DenseAnalysis {
        mean: mean_a,
        anomalies: anomalies_a,
        gain,
        p_loc,
    }
}

/// Negative log posterior in its original form: state-space misfit of every
/// analysis member in the inverse localized covariance, observation misfit of
/// every analysis member, gamma prior.
pub fn dense_cost(
    ens: &Ensemble,
    obs: &Observation,
    h: &ObservationOperator,
    rho: &DMatrix<f64>,
    alpha: &[f64],
    beta: &[f64],
    upsilon: &[f64],
) -> (f64, f64, f64) {
    let a = dense_denkf(ens, obs, h, rho);
    let hm = h.dense();
    let p_inv = a.p_loc.clone().try_inverse().expect("invertible localized P");
    let r_inv = DMatrix::from_diagonal(&obs.variances.map(|v| 1.0 / v));
    let mut state_fit = 0.0;
    let mut obs_fit = 0.0;
    for e in 0..ens.size() {
        let member_a = &a.mean + a.anomalies.column(e);
        let dx = &member_a - ens.members().column(e);
        state_fit += 0.5 * (dx.transpose() * &p_inv * &dx)[(0, 0)];
        let dy = &obs.values - &hm * &member_a;
        obs_fit += 0.5 * (dy.transpose() * &r_inv * &dy)[(0, 0)];
    }
    let prior: f64 = upsilon
        .iter()
        .zip(alpha.iter().zip(beta))
        .map(|(&u, (&al, &be))| be * u - (al - 1.0) * u.ln())
        .sum();
    (state_fit, obs_fit, prior)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn mat_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}
