//! Multi-source data, covariance sets and loadings.
//!
//! Sources are indexed from 0 in this crate. Loadings for one component are a
//! `p x N` matrix whose column `i` belongs to source `i`; its column-major
//! storage is exactly the stacked vector `(v_{.1}', ..., v_{.N}')'`, so the
//! source and variable extraction operators reduce to index selections.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, SymMatrix};

/// Observations partitioned into `N` sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceData {
    x: DMatrix<f64>,
    source_of: Vec<usize>,
    n_sources: usize,
    members: Vec<Vec<usize>>,
}

impl MultiSourceData {
    /// `source_of[r]` is the source of row `r`. Source indices must cover
    /// `0..N` with at least two rows each.
    pub fn new(x: DMatrix<f64>, source_of: Vec<usize>) -> Result<Self> {
        if source_of.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} source labels for {} rows",
                source_of.len(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        let n_sources = source_of.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_sources];
        for (row, &s) in source_of.iter().enumerate() {
            members[s].push(row);
        }
        if n_sources == 0 {
            return Err(Error::InsufficientData("no observations".into()));
        }
        for (i, m) in members.iter().enumerate() {
            if m.len() < 2 {
                return Err(Error::InsufficientData(format!("source {i} has {} rows, need at least 2", m.len())));
            }
        }
        Ok(Self { x, source_of, n_sources, members })
    }

    /// Stacks per-source blocks in order.
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let p = blocks.first().map(|b| b.ncols()).unwrap_or(0);
        if blocks.iter().any(|b| b.ncols() != p) {
            return Err(Error::Dimension("blocks differ in column count".into()));
        }
        let n: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut x = DMatrix::zeros(n, p);
        let mut labels = Vec::with_capacity(n);
        let mut r = 0;
        for (i, b) in blocks.iter().enumerate() {
            x.rows_mut(r, b.nrows()).copy_from(b);
            labels.extend(std::iter::repeat_n(i, b.nrows()));
            r += b.nrows();
        }
        Self::new(x, labels)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn source_of(&self, row: usize) -> usize {
        self.source_of[row]
    }

    pub fn source_labels(&self) -> &[usize] {
        &self.source_of
    }

    /// Row indices of source `i`, in original order.
    pub fn members(&self, i: usize) -> Result<&[usize]> {
        self.members
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Index(format!("source {i} of {}", self.n_sources)))
    }

    /// Rows belonging to source `i`, in original order.
    pub fn rows_of_source(&self, i: usize) -> Result<DMatrix<f64>> {
        let idx = self.members(i)?;
        Ok(self.x.select_rows(idx))
    }
}

/// Provenance of a covariance set produced by the robust estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMeta {
    pub lambda: f64,
    pub subset_sizes: Vec<usize>,
    pub rho: Vec<f64>,
}

/// Per-source location and scatter estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    pub sigmas: Vec<SymMatrix>,
    pub mus: Vec<DVector<f64>>,
    #[serde(default)]
    pub meta: CovarianceMeta,
}

impl CovarianceSet {
    pub fn new(sigmas: Vec<SymMatrix>, mus: Vec<DVector<f64>>) -> Result<Self> {
        let set = Self { sigmas, mus, meta: CovarianceMeta::default() };
        set.validate()?;
        Ok(set)
    }

    /// Covariances with zero means.
    pub fn from_covariances(sigmas: Vec<SymMatrix>) -> Result<Self> {
        let p = sigmas.first().map(SymMatrix::dim).unwrap_or(0);
        let mus = vec![DVector::zeros(p); sigmas.len()];
        Self::new(sigmas, mus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::InsufficientData("empty covariance set".into()));
        }
        if self.sigmas.len() != self.mus.len() {
            return Err(Error::Dimension("means and covariances differ in count".into()));
        }
        let p = self.p();
        for (s, m) in self.sigmas.iter().zip(&self.mus) {
            if s.dim() != p || m.len() != p {
                return Err(Error::Dimension("inconsistent variable count".into()));
            }
            let eig = sym_eigen(s)?;
            if eig.min_value() < -1e-10 * (1.0 + eig.values[0].abs()) {
                return Err(Error::InvalidMatrix(format!(
                    "covariance not PSD (smallest eigenvalue {:.3e})",
                    eig.min_value()
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.sigmas[0].dim()
    }

    pub fn n_sources(&self) -> usize {
        self.sigmas.len()
    }

    pub fn total_trace(&self) -> f64 {
        self.sigmas.iter().map(SymMatrix::trace).sum()
    }

    /// True when every diagonal entry equals one (within 1e-10).
    pub fn is_correlation(&self) -> bool {
        self.sigmas.iter().all(|s| s.diagonal().iter().all(|d| (d - 1.0).abs() <= 1e-10))
    }

    /// Per-source explained variance `v_{.i}' Σ_i v_{.i}`.
    pub fn explained_by_source(&self, v: &LoadingsMatrix) -> Vec<f64> {
        self.sigmas
            .iter()
            .enumerate()
            .map(|(i, s)| s.quad_form(&v.column(i)))
            .collect()
    }

    /// Block-diagonal quadratic form `v' Σ v`.
    pub fn explained_variance(&self, v: &LoadingsMatrix) -> f64 {
        self.explained_by_source(v).iter().sum()
    }
}

/// Loadings of one component: `p x N`, one unit-norm column per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingsMatrix(pub DMatrix<f64>);

impl LoadingsMatrix {
    pub fn zeros(p: usize, n_sources: usize) -> Self {
        Self(DMatrix::zeros(p, n_sources))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Source block `v_{.i}` (the `B_i` selection).
    pub fn column(&self, i: usize) -> DVector<f64> {
        self.0.column(i).into_owned()
    }

    /// Variable row `v_{j.}` (the `C_j` selection).
    pub fn row(&self, j: usize) -> DVector<f64> {
        self.0.row(j).transpose()
    }

    pub fn stack(&self) -> StackedVector {
        StackedVector(DVector::from_column_slice(self.0.as_slice()))
    }

    pub fn unstack(v: &StackedVector, p: usize, n_sources: usize) -> Result<Self> {
        if v.0.len() != p * n_sources {
            return Err(Error::Dimension(format!("stacked length {} != {p} x {n_sources}", v.0.len())));
        }
        Ok(Self(DMatrix::from_column_slice(p, n_sources, v.0.as_slice())))
    }

    /// Largest deviation of a column norm from one.
    pub fn unit_norm_error(&self) -> f64 {
        self.0.column_iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Stacked loadings vector of length `p * N`, blocked per source.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector(pub DVector<f64>);

impl StackedVector {
    /// Entries of source `i` (`B_i v` restricted to its support).
    pub fn source_block(&self, i: usize, p: usize) -> DVector<f64> {
        self.0.rows(i * p, p).into_owned()
    }

    /// Entries of variable `j` across sources (`C_j v` restricted to its support).
    pub fn variable_row(&self, j: usize, p: usize) -> DVector<f64> {
        let n = self.0.len() / p;
        DVector::from_iterator(n, (0..n).map(|l| self.0[l * p + j]))
    }
}

/// Ordered loadings for components `1..=k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadingsSet {
    pub components: Vec<LoadingsMatrix>,
}

impl LoadingsSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Loadings of source `i` as a `p x k` matrix.
    pub fn source_basis(&self, i: usize) -> Option<DMatrix<f64>> {
        let first = self.components.first()?;
        let mut m = DMatrix::zeros(first.p(), self.components.len());
        for (l, c) in self.components.iter().enumerate() {
            m.set_column(l, &c.0.column(i));
        }
        Some(m)
    }

    /// Largest `|<v^l_{.i}, v^m_{.i}>|` over sources and component pairs.
    pub fn orthogonality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (a, va) in self.components.iter().enumerate() {
            for vb in &self.components[a + 1..] {
                for i in 0..va.n_sources() {
                    worst = worst.max(va.0.column(i).dot(&vb.0.column(i)).abs());
                }
            }
        }
        worst
    }
}
