//! Ensemble containers and the statistics shared by the filter and the
//! adaptive localization engine.
//!
//! Members are stored as the columns of an `n × N` matrix. Mean and
//! anomalies are computed lazily and cached; any mutable access to the
//! members drops the caches.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone)]
pub struct Ensemble {
    members: DMatrix<f64>,
    mean: OnceLock<DVector<f64>>,
    anomalies: OnceLock<DMatrix<f64>>,
}

impl Ensemble {
    /// Wraps an `n × N` matrix whose columns are the members.
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() == 0 || members.nrows() == 0 {
            return Err(Error::EnsembleTooSmall {
                required: 1,
                got: members.ncols(),
            });
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "ensemble members must be finite".into(),
            ));
        }
        Ok(Self {
            members,
            mean: OnceLock::new(),
            anomalies: OnceLock::new(),
        })
    }

    pub fn from_members(members: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::EnsembleTooSmall { required: 1, got: 0 });
        };
        let n = first.len();
        if members.iter().any(|m| m.len() != n) {
            return Err(dim_err("members have differing lengths"));
        }
        Self::new(DMatrix::from_fn(n, members.len(), |i, e| members[e][i]))
    }

    /// Rebuilds an ensemble from a mean and anomalies, seeding both caches
    /// so the mean is carried over bit for bit.
    pub fn from_mean_and_anomalies(mean: DVector<f64>, anomalies: DMatrix<f64>) -> Result<Self> {
        if mean.len() != anomalies.nrows() {
            return Err(dim_err(format!(
                "mean has length {} but anomalies have {} rows",
                mean.len(),
                anomalies.nrows()
            )));
        }
        let mut members = anomalies.clone();
        for mut col in members.column_iter_mut() {
            col += &mean;
        }
        let ens = Self::new(members)?;
        let _ = ens.mean.set(mean);
        let _ = ens.anomalies.set(anomalies);
        Ok(ens)
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, e: usize) -> DVector<f64> {
        self.members.column(e).into_owned()
    }

    /// Mutable access to the members. Cached statistics are invalidated.
    pub fn members_mut(&mut self) -> &mut DMatrix<f64> {
        self.mean = OnceLock::new();
        self.anomalies = OnceLock::new();
        &mut self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    /// Arithmetic mean of the members.
    pub fn mean(&self) -> &DVector<f64> {
        self.mean.get_or_init(|| {
            let n_members = self.size() as f64;
            let mut sum = DVector::zeros(self.dim());
            for col in self.members.column_iter() {
                sum += col;
            }
            sum / n_members
        })
    }

    /// Deviations of the members from the mean, `X = x − x̄·1ᵀ`.
    pub fn anomalies(&self) -> Result<&DMatrix<f64>> {
        self.require_members(2)?;
        Ok(self.anomalies.get_or_init(|| {
            let mean = self.mean();
            let mut x = self.members.clone();
            for mut col in x.column_iter_mut() {
                col -= mean;
            }
            x
        }))
    }

    /// Sample covariance `X Xᵀ / (N − 1)`. Materializes an `n × n` matrix and
    /// is meant for small problems and tests; the filter never calls it.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let x = self.anomalies()?;
        let mut p = x * x.transpose() / (self.size() as f64 - 1.0);
        symmetrize(&mut p);
        Ok(p)
    }

    /// Multiplicative inflation of the anomalies about an unchanged mean.
    pub fn inflate(&self, alpha: f64) -> Result<Ensemble> {
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "inflation factor must be ≥ 1, got {alpha}"
            )));
        }
        if alpha == 1.0 {
            return Ok(self.clone());
        }
        let anomalies = self.anomalies()? * alpha;
        Self::from_mean_and_anomalies(self.mean().clone(), anomalies)
    }

    fn require_members(&self, required: usize) -> Result<()> {
        if self.size() < required {
            return Err(Error::EnsembleTooSmall {
                required,
                got: self.size(),
            });
        }
        Ok(())
    }
}

/// Averages a square matrix with its transpose in place.
pub(crate) fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Linear selection operator `H`: picks `m` distinct state components.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    indices: Vec<usize>,
    state_dim: usize,
}

impl ObservationOperator {
    /// Builds an operator from zero-based state indices.
    pub fn new(indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "observation operator needs at least one index".into(),
            ));
        }
        let mut seen = vec![false; state_dim];
        for &i in &indices {
            if i >= state_dim {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    dim: state_dim,
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate observed index {i}"
                )));
            }
        }
        Ok(Self { indices, state_dim })
    }

    /// Builds an operator from one-based indices, as used in config files.
    pub fn from_one_based(indices: &[usize], state_dim: usize) -> Result<Self> {
        let zero_based = indices
            .iter()
            .map(|&i| {
                i.checked_sub(1).ok_or(Error::IndexOutOfRange {
                    index: 0,
                    dim: state_dim,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(zero_based, state_dim)
    }

    pub fn identity(state_dim: usize) -> Self {
        Self {
            indices: (0..state_dim).collect(),
            state_dim,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn obs_dim(&self) -> usize {
        self.indices.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `H x`.
    pub fn project_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(x.len())?;
        Ok(DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&i| x[i]),
        ))
    }

    /// `H X`: selected rows, all columns.
    pub fn project_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x.nrows())?;
        Ok(x.select_rows(self.indices.iter()))
    }

    /// `H P Hᵀ`: selected rows and columns of a square matrix.
    pub fn project_matrix(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(p.nrows())?;
        if p.ncols() != p.nrows() {
            return Err(dim_err("project_matrix needs a square matrix"));
        }
        let m = self.indices.len();
        Ok(DMatrix::from_fn(m, m, |a, b| {
            p[(self.indices[a], self.indices[b])]
        }))
    }

    /// Dense `m × n` 0/1 selection matrix. For tests and small problems.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.indices.len(), self.state_dim);
        for (row, &i) in self.indices.iter().enumerate() {
            h[(row, i)] = 1.0;
        }
        h
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.state_dim {
            return Err(dim_err(format!(
                "operator expects state dimension {}, got {rows}",
                self.state_dim
            )));
        }
        Ok(())
    }
}

/// Observation vector with a diagonal error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: DVector<f64>,
    pub variances: DVector<f64>,
}

impl Observation {
    pub fn new(values: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        if values.len() != variances.len() {
            return Err(dim_err("observation values and variances differ in length"));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "observation error variances must be positive and finite".into(),
            ));
        }
        Ok(Self { values, variances })
    }

    pub fn with_uniform_variance(values: DVector<f64>, variance: f64) -> Result<Self> {
        let m = values.len();
        Self::new(values, DVector::from_element(m, variance))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_operator(&self, h: &ObservationOperator) -> Result<()> {
        if self.len() != h.obs_dim() {
            return Err(dim_err(format!(
                "observation has {} entries, operator selects {}",
                self.len(),
                h.obs_dim()
            )));
        }
        Ok(())
    }
}
