//! 1.5-layer quasi-geostrophic model on the unit square.
//!
//! ```text
//! q_t = −ψ_x − ε J(ψ, q) − A Δ³ψ + 2π sin(2πy)
//! Δψ − Fψ = q
//! ```
//!
//! Fields live on the `G × G` interior of a uniform grid with spacing
//! `h = 1/(G+1)`; boundary values are held at zero. Component `k` of a
//! field is the grid point `(ix, iy) = (k mod G, k div G)` at
//! `((ix+1)h, (iy+1)h)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelSystem;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QgStateVariable {
    /// The assimilated state is the stream function ψ.
    #[default]
    Psi,
    /// The assimilated state is the potential vorticity q.
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QgConfig {
    /// Interior points per side.
    pub grid: usize,
    #[serde(rename = "f")]
    pub big_f: f64,
    pub eps: f64,
    #[serde(rename = "a")]
    pub hyperviscosity: f64,
    pub dt: f64,
    pub state: QgStateVariable,
}

impl Default for QgConfig {
    fn default() -> Self {
        Self {
            grid: 33,
            big_f: 1600.0,
            eps: 1e-5,
            hyperviscosity: 2e-11,
            dt: 1.0,
            state: QgStateVariable::Psi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QgModel {
    cfg: QgConfig,
    h: f64,
    helmholtz: BandedCholesky,
    forcing: Vec<f64>,
}

impl QgModel {
    pub fn new(cfg: QgConfig) -> Result<Self> {
        if cfg.grid < 8 {
            return Err(Error::InvalidArgument(format!(
                "QG grid must be at least 8, got {}",
                cfg.grid
            )));
        }
        if !(cfg.big_f > 0.0) || !(cfg.dt > 0.0) {
            return Err(Error::InvalidArgument("QG needs F > 0 and dt > 0".into()));
        }
        let g = cfg.grid;
        let h = 1.0 / (g as f64 + 1.0);
        let helmholtz = BandedCholesky::helmholtz(g, h, cfg.big_f)?;
        let forcing = (0..g * g)
            .map(|k| {
                let y = (k / g + 1) as f64 * h;
                2.0 * PI * (2.0 * PI * y).sin()
            })
            .collect();
        Ok(Self {
            cfg,
            h,
            helmholtz,
            forcing,
        })
    }

    pub fn config(&self) -> &QgConfig {
        &self.cfg
    }

    pub fn grid(&self) -> usize {
        self.cfg.grid
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Grid coordinates `(ix, iy)` of component `k`.
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.cfg.grid, k / self.cfg.grid)
    }

    /// Solves `Δψ − Fψ = q` with homogeneous Dirichlet conditions.
    pub fn helmholtz_solve(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_len(q.len())?;
        let mut rhs: Vec<f64> = q.iter().map(|v| -v).collect();
        self.helmholtz.solve_in_place(&mut rhs);
        Ok(rhs)
    }

    /// `Δψ − Fψ` on the interior.
    pub fn vorticity_from_psi(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.check_len(psi.len())?;
        let mut q = laplacian(self.cfg.grid, self.h, psi);
        for (qk, &p) in q.iter_mut().zip(psi) {
            *qk -= self.cfg.big_f * p;
        }
        Ok(q)
    }

    pub fn laplacian(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f.len())?;
        Ok(laplacian(self.cfg.grid, self.h, f))
    }

    /// `q_t` for a vorticity field `q`.
    pub fn qg_tendency(&self, q: &[f64]) -> Result<Vec<f64>> {
        let psi = self.helmholtz_solve(q)?;
        Ok(self.vorticity_tendency(&psi, q))
    }

    fn vorticity_tendency(&self, psi: &[f64], q: &[f64]) -> Vec<f64> {
        let g = self.cfg.grid;
        let h = self.h;
        let jac = arakawa_jacobian(g, h, psi, q);
        let lap3 = laplacian(g, h, &laplacian(g, h, &laplacian(g, h, psi)));
        let mut out = vec![0.0; g * g];
        for iy in 0..g {
            for ix in 0..g {
                let k = iy * g + ix;
                let east = if ix + 1 < g { psi[k + 1] } else { 0.0 };
                let west = if ix > 0 { psi[k - 1] } else { 0.0 };
                let psi_x = (east - west) / (2.0 * h);
                out[k] = -psi_x - self.cfg.eps * jac[k] - self.cfg.hyperviscosity * lap3[k]
                    + self.forcing[k];
            }
        }
        out
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let n = self.cfg.grid * self.cfg.grid;
        if len != n {
            return Err(dim_err(format!("QG field has length {len}, expected {n}")));
        }
        Ok(())
    }
}

impl ModelSystem for QgModel {
    fn dim(&self) -> usize {
        self.cfg.grid * self.cfg.grid
    }

    fn tendency(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self.cfg.state {
            QgStateVariable::Q => {
                let mut psi: Vec<f64> = x.iter().map(|v| -v).collect();
                self.helmholtz.solve_in_place(&mut psi);
                out.copy_from_slice(&self.vorticity_tendency(&psi, x));
            }
            QgStateVariable::Psi => {
                let mut q = laplacian(self.cfg.grid, self.h, x);
                for (qk, &p) in q.iter_mut().zip(x) {
                    *qk -= self.cfg.big_f * p;
                }
                let qt = self.vorticity_tendency(x, &q);
                for (o, v) in out.iter_mut().zip(qt) {
                    *o = -v;
                }
                self.helmholtz.solve_in_place(out);
            }
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let (ix, iy) = self.coords(i);
        let (jx, jy) = self.coords(j);
        let dx = ix as f64 - jx as f64;
        let dy = iy as f64 - jy as f64;
        (dx * dx + dy * dy).sqrt()
    }

    fn default_timestep(&self) -> f64 {
        self.cfg.dt
    }
}

/// Copies an interior field into a `(G+2)²` array with a ring of zeros.
fn padded(g: usize, f: &[f64]) -> Vec<f64> {
    let w = g + 2;
    let mut out = vec![0.0; w * w];
    for iy in 0..g {
        out[(iy + 1) * w + 1..(iy + 1) * w + 1 + g].copy_from_slice(&f[iy * g..(iy + 1) * g]);
    }
    out
}

/// Five-point Laplacian with zero Dirichlet boundary values.
pub(crate) fn laplacian(g: usize, h: f64, f: &[f64]) -> Vec<f64> {
    let w = g + 2;
    let p = padded(g, f);
    let inv_h2 = 1.0 / (h * h);
    let mut out = vec![0.0; g * g];
    for iy in 0..g {
        for ix in 0..g {
            let c = (iy + 1) * w + ix + 1;
            out[iy * g + ix] = (p[c + 1] + p[c - 1] + p[c + w] + p[c - w] - 4.0 * p[c]) * inv_h2;
        }
    }
    out
}

/// Arakawa's energy- and enstrophy-conserving nine-point Jacobian
/// `J(a, b) ≈ a_x b_y − a_y b_x`, with both fields zero on the boundary.
pub fn arakawa_jacobian(g: usize, h: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    let w = g + 2;
    let pa = padded(g, a);
    let pb = padded(g, b);
    let scale = 1.0 / (12.0 * h * h);
    let mut out = vec![0.0; g * g];
    for iy in 0..g {
        for ix in 0..g {
            let c = (iy + 1) * w + ix + 1;
            let (e, wv, n, s) = (c + 1, c - 1, c + w, c - w);
            let (ne, nw, se, sw) = (n + 1, n - 1, s + 1, s - 1);
            let jpp = (pa[e] - pa[wv]) * (pb[n] - pb[s]) - (pa[n] - pa[s]) * (pb[e] - pb[wv]);
            let jpx = pa[e] * (pb[ne] - pb[se]) - pa[wv] * (pb[nw] - pb[sw])
                - pa[n] * (pb[ne] - pb[nw])
                + pa[s] * (pb[se] - pb[sw]);
            let jxp = pb[n] * (pa[ne] - pa[nw]) - pb[s] * (pa[se] - pa[sw])
                - pb[e] * (pa[ne] - pa[se])
                + pb[wv] * (pa[nw] - pa[sw]);
            out[iy * g + ix] = (jpp + jpx + jxp) * scale;
        }
    }
    out
}

/// Dense `Δ − F·I` on a `G × G` interior. Only for small grids and tests.
pub fn helmholtz_operator_dense(grid: usize, big_f: f64) -> DMatrix<f64> {
    let n = grid * grid;
    let h = 1.0 / (grid as f64 + 1.0);
    let inv_h2 = 1.0 / (h * h);
    let mut a = DMatrix::zeros(n, n);
    for iy in 0..grid {
        for ix in 0..grid {
            let k = iy * grid + ix;
            a[(k, k)] = -4.0 * inv_h2 - big_f;
            if ix > 0 {
                a[(k, k - 1)] = inv_h2;
            }
            if ix + 1 < grid {
                a[(k, k + 1)] = inv_h2;
            }
            if iy > 0 {
                a[(k, k - grid)] = inv_h2;
            }
            if iy + 1 < grid {
                a[(k, k + grid)] = inv_h2;
            }
        }
    }
    a
}

/// Cholesky factor of a symmetric positive-definite banded matrix, stored
/// row-wise as `lower[i·(bw+1) + d] = L[i, i−d]`.
#[derive(Debug, Clone)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    lower: Vec<f64>,
}

impl BandedCholesky {
    /// Factors `F·I − Δ`, the negated Helmholtz operator.
    fn helmholtz(g: usize, h: f64, big_f: f64) -> Result<Self> {
        let n = g * g;
        let inv_h2 = 1.0 / (h * h);
        let entry = |i: usize, j: usize| -> f64 {
            if i == j {
                return big_f + 4.0 * inv_h2;
            }
            let d = i - j; // j < i
            if d == g || (d == 1 && !i.is_multiple_of(g)) {
                -inv_h2
            } else {
                0.0
            }
        };
        Self::factor(n, g, entry)
    }

    fn factor(n: usize, bw: usize, a: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let stride = bw + 1;
        let mut lower = vec![0.0; n * stride];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = a(i, j);
                let k0 = lo.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= lower[i * stride + (i - k)] * lower[j * stride + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotSpd);
                    }
                    lower[i * stride] = s.sqrt();
                } else {
                    lower[i * stride + (i - j)] = s / lower[j * stride];
                }
            }
        }
        Ok(Self { n, bw, lower })
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let stride = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.lower[i * stride + (i - k)] * b[k];
            }
            b[i] = s / self.lower[i * stride];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + 1 + self.bw).min(self.n) {
                s -= self.lower[k * stride + (k - i)] * b[k];
            }
            b[i] = s / self.lower[i * stride];
        }
    }
}
