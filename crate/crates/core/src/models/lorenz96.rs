use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{integrate_with_step, ModelSystem};
use crate::error::{dim_err, Error, Result};

/// Canonical Lorenz'96 with constant forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lorenz96Config {
    pub n: usize,
    pub forcing: f64,
    /// Integrator step in model time units.
    pub dt: f64,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Self {
            n: 40,
            forcing: 8.0,
            dt: 0.01,
        }
    }
}

/// Lorenz'96 with the phase-shifted periodic forcing
/// `F_i(t) = base + amplitude·cos(ω(t + ((i−1) mod q)/q))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultivariateLorenz96Config {
    pub n: usize,
    pub base: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub q: usize,
    pub dt: f64,
}

impl Default for MultivariateLorenz96Config {
    fn default() -> Self {
        Self {
            n: 40,
            base: 8.0,
            amplitude: 4.0,
            omega: 2.0 * PI,
            q: 4,
            dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forcing {
    Constant(f64),
    Periodic {
        base: f64,
        amplitude: f64,
        omega: f64,
        q: usize,
    },
}

impl Forcing {
    /// Forcing applied to the zero-based component `i` at time `t`.
    #[inline]
    pub fn value(&self, t: f64, i: usize) -> f64 {
        match *self {
            Forcing::Constant(f) => f,
            Forcing::Periodic {
                base,
                amplitude,
                omega,
                q,
            } => base + amplitude * (omega * (t + (i % q) as f64 / q as f64)).cos(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            Forcing::Constant(f) => f,
            Forcing::Periodic { base, .. } => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96 {
    n: usize,
    forcing: Forcing,
    dt: f64,
}

impl Lorenz96 {
    pub fn new(cfg: Lorenz96Config) -> Result<Self> {
        check_dim(cfg.n)?;
        if !(cfg.dt > 0.0) {
            return Err(Error::InvalidArgument("Lorenz'96 dt must be > 0".into()));
        }
        Ok(Self {
            n: cfg.n,
            forcing: Forcing::Constant(cfg.forcing),
            dt: cfg.dt,
        })
    }

    pub fn multivariate(cfg: MultivariateLorenz96Config) -> Result<Self> {
        check_dim(cfg.n)?;
        if cfg.q == 0 || !cfg.n.is_multiple_of(cfg.q) {
            return Err(Error::InvalidArgument(format!(
                "q = {} must be a positive divisor of n = {}",
                cfg.q, cfg.n
            )));
        }
        if !(cfg.dt > 0.0) {
            return Err(Error::InvalidArgument("Lorenz'96 dt must be > 0".into()));
        }
        Ok(Self {
            n: cfg.n,
            forcing: Forcing::Periodic {
                base: cfg.base,
                amplitude: cfg.amplitude,
                omega: cfg.omega,
                q: cfg.q,
            },
            dt: cfg.dt,
        })
    }

    pub fn forcing(&self) -> Forcing {
        self.forcing
    }

    /// Attractor initial state: uniform `base` with component 20 (one-based,
    /// clamped to `n`) nudged by 0.008, integrated over `[−1, 0]`.
    pub fn initial_condition(&self) -> Result<DVector<f64>> {
        let start = self.unintegrated_initial_state();
        integrate_with_step(self, &start, -1.0, 0.0, self.dt)
    }

    /// The perturbed uniform state before the one-unit spin-up.
    pub fn unintegrated_initial_state(&self) -> DVector<f64> {
        let base = self.forcing.base();
        let mut x = DVector::from_element(self.n, base);
        let idx = self.n.min(20) - 1;
        x[idx] = base + 0.008;
        x
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "Lorenz'96 needs n ≥ 4, got {n}"
        )));
    }
    Ok(())
}

impl ModelSystem for Lorenz96 {
    fn dim(&self) -> usize {
        self.n
    }

    fn tendency(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let xp1 = x[(i + 1) % n];
            let xm1 = x[(i + n - 1) % n];
            let xm2 = x[(i + n - 2) % n];
            out[i] = (xp1 - xm2) * xm1 - x[i] + self.forcing.value(t, i);
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        ring_distance(self.n, i, j)
    }

    fn default_timestep(&self) -> f64 {
        self.dt
    }
}

#[inline]
fn ring_distance(n: usize, i: usize, j: usize) -> f64 {
    let diff = i.abs_diff(j);
    diff.min(n - diff) as f64
}

/// `dx/dt` for a checked state vector.
pub fn lorenz96_tendency(model: &Lorenz96, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.n {
        return Err(dim_err(format!(
            "state has length {}, model dimension is {}",
            x.len(),
            model.n
        )));
    }
    let mut out = DVector::zeros(model.n);
    model.tendency(t, x.as_slice(), out.as_mut_slice());
    Ok(out)
}

pub fn lorenz96_initial_condition(model: &Lorenz96) -> Result<DVector<f64>> {
    model.initial_condition()
}

/// Shortest cyclic distance between one-based components `i` and `j` on a
/// ring of `n` variables.
pub fn cyclic_distance(n: usize, i: usize, j: usize) -> Result<f64> {
    for idx in [i, j] {
        if idx == 0 || idx > n {
            return Err(Error::IndexOutOfRange { index: idx, dim: n });
        }
    }
    let (i, j) = (i as i64, j as i64);
    let n = n as i64;
    let d = (i - j).abs().min((n + i - j).abs()).min((n + j - i).abs());
    Ok(d as f64)
}

/// Forcing of the one-based component `i` at time `t`.
pub fn multivariate_forcing(cfg: &MultivariateLorenz96Config, t: f64, i: usize) -> Result<f64> {
    if i == 0 || i > cfg.n {
        return Err(Error::IndexOutOfRange { index: i, dim: cfg.n });
    }
    if cfg.q == 0 {
        return Err(Error::InvalidArgument("q must be positive".into()));
    }
    let phase = ((i - 1) % cfg.q) as f64 / cfg.q as f64;
    Ok(cfg.base + cfg.amplitude * (cfg.omega * (t + phase)).cos())
}
