//! Distance-based tapering and the Schur localization matrix.
//!
//! For per-component radii `r`, the taper between components `i` and `k` is
//! `ρ[i,k] = m(ℓ(d(i,k)/r_i), ℓ(d(k,i)/r_k))` where `ℓ` is the localization
//! function and `m` a mean combiner. With equal radii every combiner
//! collapses to the univariate taper `ℓ(d/r)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::ObservationOperator;
use crate::error::{dim_err, Error, Result};
use crate::models::ModelSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationFunction {
    /// `ℓ(u) = exp(−u²/2)`.
    #[default]
    Gauss,
}

impl LocalizationFunction {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            LocalizationFunction::Gauss => (-0.5 * u * u).exp(),
        }
    }

    /// `∂/∂r log ℓ(d/r)`.
    #[inline]
    pub fn log_radius_derivative(self, d: f64, r: f64) -> f64 {
        match self {
            LocalizationFunction::Gauss => d * d / (r * r * r),
        }
    }
}

/// Gaussian taper, rejecting negative arguments.
pub fn gauss_loc(u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "localization argument must be ≥ 0, got {u}"
        )));
    }
    Ok(LocalizationFunction::Gauss.eval(u))
}

/// Commutative, idempotent combiner of two taper values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeanFunction {
    Min,
    Max,
    #[default]
    Mean,
    Sqrt,
    Rms,
    Harm,
}

impl MeanFunction {
    pub const ALL: [MeanFunction; 6] = [
        MeanFunction::Min,
        MeanFunction::Max,
        MeanFunction::Mean,
        MeanFunction::Sqrt,
        MeanFunction::Rms,
        MeanFunction::Harm,
    ];

    pub const DIFFERENTIABLE: [MeanFunction; 4] = [
        MeanFunction::Mean,
        MeanFunction::Sqrt,
        MeanFunction::Rms,
        MeanFunction::Harm,
    ];

    #[inline]
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            MeanFunction::Min => a.min(b),
            MeanFunction::Max => a.max(b),
            MeanFunction::Mean => 0.5 * (a + b),
            MeanFunction::Sqrt => (a * b).sqrt(),
            MeanFunction::Rms => ((a * a + b * b) * 0.5).sqrt(),
            MeanFunction::Harm => {
                let s = a + b;
                if s == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / s
                }
            }
        }
    }

    pub fn is_differentiable(self) -> bool {
        !matches!(self, MeanFunction::Min | MeanFunction::Max)
    }

    /// Derivative of `m(a, b)` given the logarithmic derivatives of its
    /// arguments, `dla = a'/a` and `dlb = b'/b`. `None` for min and max.
    #[inline]
    pub fn derivative(self, a: f64, b: f64, dla: f64, dlb: f64) -> Option<f64> {
        match self {
            MeanFunction::Min | MeanFunction::Max => None,
            MeanFunction::Mean => Some(0.5 * (a * dla + b * dlb)),
            MeanFunction::Sqrt => Some((a * b).sqrt() * 0.5 * (dla + dlb)),
            MeanFunction::Rms => {
                let m = self.combine(a, b);
                Some(if m == 0.0 {
                    0.0
                } else {
                    (a * a * dla + b * b * dlb) / (2.0 * m)
                })
            }
            MeanFunction::Harm => {
                let s = a + b;
                Some(if s == 0.0 {
                    0.0
                } else {
                    2.0 * a * b * (b * dla + a * dlb) / (s * s)
                })
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeanFunction::Min => "min",
            MeanFunction::Max => "max",
            MeanFunction::Mean => "mean",
            MeanFunction::Sqrt => "sqrt",
            MeanFunction::Rms => "rms",
            MeanFunction::Harm => "harm",
        }
    }
}

impl fmt::Display for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeanFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeanFunction::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mean function {s:?}")))
    }
}

/// Assignment of state components to radius groups (zero-based ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMapping {
    assignment: Vec<usize>,
    groups: usize,
}

impl GroupMapping {
    pub fn new(assignment: Vec<usize>, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidArgument("need at least one group".into()));
        }
        let mut used = vec![false; groups];
        for &a in &assignment {
            if a >= groups {
                return Err(Error::InvalidArgument(format!(
                    "group id {a} out of range for {groups} groups"
                )));
            }
            used[a] = true;
        }
        if let Some(empty) = used.iter().position(|&u| !u) {
            return Err(Error::InvalidArgument(format!("group {empty} is empty")));
        }
        Ok(Self { assignment, groups })
    }

    /// Every component in one group.
    pub fn univariate(n: usize) -> Self {
        Self {
            assignment: vec![0; n],
            groups: 1,
        }
    }

    /// Component `i` goes to group `i mod g`.
    pub fn cyclic(n: usize, groups: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i % groups.max(1)).collect(), groups)
    }

    /// Contiguous blocks of (nearly) equal size.
    pub fn blocks(n: usize, groups: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i * groups.max(1) / n.max(1)).collect(), groups)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    #[inline]
    pub fn group_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Expands group radii to one radius per component.
    pub fn prolong(&self, upsilon: &RadiiVector) -> Result<Vec<f64>> {
        if upsilon.len() != self.groups {
            return Err(dim_err(format!(
                "{} radii for {} groups",
                upsilon.len(),
                self.groups
            )));
        }
        Ok(self.assignment.iter().map(|&g| upsilon.0[g]).collect())
    }

    /// Recovers group radii from per-component radii; fails if members of a
    /// group disagree.
    pub fn read_back(&self, radii: &[f64]) -> Result<RadiiVector> {
        if radii.len() != self.assignment.len() {
            return Err(dim_err("radii length does not match the mapping"));
        }
        let mut out: Vec<Option<f64>> = vec![None; self.groups];
        for (&g, &r) in self.assignment.iter().zip(radii) {
            match out[g] {
                None => out[g] = Some(r),
                Some(prev) if prev != r => {
                    return Err(Error::InvalidArgument(format!(
                        "group {g} has inconsistent radii {prev} and {r}"
                    )))
                }
                _ => {}
            }
        }
        RadiiVector::new(out.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect())
    }
}

/// Positive per-group radii.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiiVector(Vec<f64>);

impl RadiiVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("radii vector is empty".into()));
        }
        if let Some(bad) = values.iter().find(|&&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radii must be positive and finite, got {bad}"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(groups: usize, r: f64) -> Result<Self> {
        Self::new(vec![r; groups])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Taper function, combiner and grouping: everything needed to turn group
/// radii into `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSpec {
    pub function: LocalizationFunction,
    pub mean: MeanFunction,
    pub groups: GroupMapping,
}

impl LocalizationSpec {
    pub fn univariate(n: usize) -> Self {
        Self {
            function: LocalizationFunction::Gauss,
            mean: MeanFunction::Mean,
            groups: GroupMapping::univariate(n),
        }
    }
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if let Some(&bad) = radii.iter().find(|&&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "localization radius must be > 0, got {bad}"
        )));
    }
    Ok(())
}

#[inline]
fn taper_entry(
    loc: LocalizationFunction,
    mean: MeanFunction,
    d: f64,
    ri: f64,
    rk: f64,
) -> f64 {
    if ri == rk {
        loc.eval(d / ri)
    } else {
        mean.combine(loc.eval(d / ri), loc.eval(d / rk))
    }
}

/// Full `n × n` localization matrix for per-component radii.
pub fn build_rho<M: ModelSystem + ?Sized>(
    model: &M,
    loc: LocalizationFunction,
    mean: MeanFunction,
    radii: &[f64],
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    if radii.len() != n {
        return Err(dim_err(format!("{} radii for dimension {n}", radii.len())));
    }
    check_radii(radii)?;
    let mut rho = DMatrix::zeros(n, n);
    for i in 0..n {
        rho[(i, i)] = 1.0;
        for k in (i + 1)..n {
            let v = taper_entry(loc, mean, model.distance(i, k), radii[i], radii[k]);
            rho[(i, k)] = v;
            rho[(k, i)] = v;
        }
    }
    Ok(rho)
}

/// `∂ρ/∂υ_j` for the full matrix.
pub fn drho_dupsilon<M: ModelSystem + ?Sized>(
    model: &M,
    spec: &LocalizationSpec,
    upsilon: &RadiiVector,
    group: usize,
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    if spec.groups.len() != n {
        return Err(dim_err("group mapping does not match model dimension"));
    }
    let all: Vec<usize> = (0..n).collect();
    let dist = DMatrix::from_fn(n, n, |i, k| model.distance(i, k));
    derivative_block(spec, upsilon, group, &all, &all, &dist)
}

fn derivative_block(
    spec: &LocalizationSpec,
    upsilon: &RadiiVector,
    group: usize,
    rows: &[usize],
    cols: &[usize],
    dist: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !spec.mean.is_differentiable() {
        return Err(Error::NonDifferentiable(spec.mean.name().into()));
    }
    if group >= spec.groups.groups() {
        return Err(Error::IndexOutOfRange {
            index: group,
            dim: spec.groups.groups(),
        });
    }
    let radii = spec.groups.prolong(upsilon)?;
    let loc = spec.function;
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        let gi = spec.groups.group_of(i) == group;
        for (b, &k) in cols.iter().enumerate() {
            let gk = spec.groups.group_of(k) == group;
            if !(gi || gk) || i == k {
                continue;
            }
            let d = dist[(a, b)];
            let (ri, rk) = (radii[i], radii[k]);
            let la = loc.eval(d / ri);
            let lb = loc.eval(d / rk);
            let dla = if gi { loc.log_radius_derivative(d, ri) } else { 0.0 };
            let dlb = if gk { loc.log_radius_derivative(d, rk) } else { 0.0 };
            out[(a, b)] = spec
                .mean
                .derivative(la, lb, dla, dlb)
                .expect("differentiability checked above");
        }
    }
    Ok(out)
}

/// Schur (element-wise) product `ρ ∘ P`.
pub fn localize_cov(rho: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rho.shape() != cov.shape() {
        return Err(dim_err(format!(
            "taper {:?} and covariance {:?} differ in shape",
            rho.shape(),
            cov.shape()
        )));
    }
    Ok(rho.component_mul(cov))
}

/// Distances between every state component and the observed components,
/// precomputed once per model and observation network.
#[derive(Debug, Clone)]
pub struct LocalizationGeometry {
    observed: Vec<usize>,
    /// `n × m`: `d(i, o_k)`.
    state_obs: DMatrix<f64>,
    /// `m × m`: `d(o_a, o_b)`.
    obs_obs: DMatrix<f64>,
}

impl LocalizationGeometry {
    pub fn new<M: ModelSystem + ?Sized>(model: &M, h: &ObservationOperator) -> Result<Self> {
        if h.state_dim() != model.dim() {
            return Err(dim_err("observation operator does not match model"));
        }
        let observed = h.indices().to_vec();
        let n = model.dim();
        let m = observed.len();
        let state_obs = DMatrix::from_fn(n, m, |i, k| model.distance(i, observed[k]));
        let obs_obs = DMatrix::from_fn(m, m, |a, b| state_obs[(observed[a], b)]);
        Ok(Self {
            observed,
            state_obs,
            obs_obs,
        })
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn state_dim(&self) -> usize {
        self.state_obs.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.observed.len()
    }

    pub fn obs_distances(&self) -> &DMatrix<f64> {
        &self.obs_obs
    }

    /// Taper rows for every state component against the observed columns
    /// (`n × m`), i.e. the entries of `ρ` that multiply `P Hᵀ`.
    pub fn rho_state_obs(&self, spec: &LocalizationSpec, radii: &[f64]) -> Result<DMatrix<f64>> {
        self.check(spec, radii)?;
        let (n, m) = self.state_obs.shape();
        let mut out = DMatrix::zeros(n, m);
        for k in 0..m {
            let ok = self.observed[k];
            let rk = radii[ok];
            for i in 0..n {
                out[(i, k)] = if i == ok {
                    1.0
                } else {
                    taper_entry(spec.function, spec.mean, self.state_obs[(i, k)], radii[i], rk)
                };
            }
        }
        Ok(out)
    }

    /// Observed block `H ρ Hᵀ` (`m × m`).
    pub fn rho_obs(&self, spec: &LocalizationSpec, radii: &[f64]) -> Result<DMatrix<f64>> {
        self.check(spec, radii)?;
        let m = self.observed.len();
        let mut out = DMatrix::zeros(m, m);
        for a in 0..m {
            out[(a, a)] = 1.0;
            let ra = radii[self.observed[a]];
            for b in (a + 1)..m {
                let v = taper_entry(
                    spec.function,
                    spec.mean,
                    self.obs_obs[(a, b)],
                    ra,
                    radii[self.observed[b]],
                );
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        Ok(out)
    }

    /// `H (∂ρ/∂υ_j) Hᵀ` (`m × m`).
    pub fn drho_obs(
        &self,
        spec: &LocalizationSpec,
        upsilon: &RadiiVector,
        group: usize,
    ) -> Result<DMatrix<f64>> {
        if spec.groups.len() != self.state_dim() {
            return Err(dim_err("group mapping does not match the state dimension"));
        }
        derivative_block(
            spec,
            upsilon,
            group,
            &self.observed,
            &self.observed,
            &self.obs_obs,
        )
    }

    fn check(&self, spec: &LocalizationSpec, radii: &[f64]) -> Result<()> {
        if radii.len() != self.state_dim() || spec.groups.len() != self.state_dim() {
            return Err(dim_err("radii or group mapping do not match the state dimension"));
        }
        check_radii(radii)
    }
}
