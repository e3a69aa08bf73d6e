//! Dynamical systems behind a uniform interface, and the RK4 integrator
//! used to advance truth and ensemble members.

mod lorenz96;
mod qg;

pub use lorenz96::{
    cyclic_distance, lorenz96_initial_condition, lorenz96_tendency, multivariate_forcing,
    Forcing, Lorenz96, Lorenz96Config, MultivariateLorenz96Config,
};
pub use qg::{arakawa_jacobian, helmholtz_operator_dense, QgConfig, QgModel, QgStateVariable};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ensemble::Ensemble;
use crate::error::{dim_err, Error, Result};

/// A deterministic dynamical system `dx/dt = f(t, x)` with a notion of
/// physical distance between state components.
pub trait ModelSystem: Send + Sync {
    /// State dimension `n`.
    fn dim(&self) -> usize;

    /// Writes `dx/dt` into `out`. Both slices have length [`Self::dim`].
    fn tendency(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Physical distance between state components `i` and `j` (zero-based).
    fn distance(&self, i: usize, j: usize) -> f64;

    /// Integrator step used by [`propagate`].
    fn default_timestep(&self) -> f64;
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<M: ModelSystem + ?Sized>(
    model: &M,
    t: f64,
    x: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(dim_err(format!(
            "state has length {}, model dimension is {}",
            x.len(),
            model.dim()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("timestep must be > 0, got {dt}")));
    }
    let mut out = x.as_slice().to_vec();
    let mut work = Rk4Work::new(x.len());
    work.step(model, t, &mut out, dt);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelBlowUp { member: None });
    }
    Ok(DVector::from_vec(out))
}

struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4Work {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
        }
    }

    fn step<M: ModelSystem + ?Sized>(&mut self, model: &M, t: f64, x: &mut [f64], dt: f64) {
        let half = 0.5 * dt;
        model.tendency(t, x, &mut self.k1);
        for ((s, &xi), &k) in self.stage.iter_mut().zip(x.iter()).zip(&self.k1) {
            *s = xi + half * k;
        }
        model.tendency(t + half, &self.stage, &mut self.k2);
        for ((s, &xi), &k) in self.stage.iter_mut().zip(x.iter()).zip(&self.k2) {
            *s = xi + half * k;
        }
        model.tendency(t + half, &self.stage, &mut self.k3);
        for ((s, &xi), &k) in self.stage.iter_mut().zip(x.iter()).zip(&self.k3) {
            *s = xi + dt * k;
        }
        model.tendency(t + dt, &self.stage, &mut self.k4);
        let sixth = dt / 6.0;
        for i in 0..x.len() {
            x[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Number of steps and the (possibly shortened) step covering `[t0, t1]`.
fn step_plan(t0: f64, t1: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "integration interval [{t0}, {t1}] is empty"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("timestep must be > 0, got {dt}")));
    }
    let span = t1 - t0;
    let ratio = span / dt;
    let rounded = ratio.round();
    if rounded >= 1.0 && (rounded * dt - span).abs() <= 1e-9 {
        Ok((rounded as usize, dt))
    } else {
        let steps = ratio.ceil().max(1.0);
        Ok((steps as usize, span / steps))
    }
}

/// Integrates a single state from `t0` to `t1` with the model's timestep.
pub fn integrate<M: ModelSystem + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    t0: f64,
    t1: f64,
) -> Result<DVector<f64>> {
    integrate_with_step(model, x, t0, t1, model.default_timestep())
}

pub fn integrate_with_step<M: ModelSystem + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(dim_err("state length does not match model dimension"));
    }
    let (steps, h) = step_plan(t0, t1, dt)?;
    let mut state = x.as_slice().to_vec();
    let mut work = Rk4Work::new(state.len());
    for s in 0..steps {
        work.step(model, t0 + s as f64 * h, &mut state, h);
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelBlowUp { member: None });
    }
    Ok(DVector::from_vec(state))
}

/// Advances every member from `t0` to `t1`. Members are integrated
/// independently; the result does not depend on evaluation order.
pub fn propagate<M: ModelSystem + ?Sized>(
    model: &M,
    ens: &Ensemble,
    t0: f64,
    t1: f64,
) -> Result<Ensemble> {
    if ens.dim() != model.dim() {
        return Err(dim_err("ensemble dimension does not match model dimension"));
    }
    let (steps, h) = step_plan(t0, t1, model.default_timestep())?;
    let n = ens.dim();
    let columns: Vec<Result<Vec<f64>>> = (0..ens.size())
        .into_par_iter()
        .map(|e| {
            let mut state = ens.members().column(e).iter().copied().collect::<Vec<_>>();
            let mut work = Rk4Work::new(n);
            for s in 0..steps {
                work.step(model, t0 + s as f64 * h, &mut state, h);
            }
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::ModelBlowUp { member: Some(e) });
            }
            Ok(state)
        })
        .collect();
    let mut members = DMatrix::zeros(n, ens.size());
    for (e, col) in columns.into_iter().enumerate() {
        members.column_mut(e).copy_from_slice(&col?);
    }
    Ensemble::new(members)
}
