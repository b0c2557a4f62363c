use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default eigenvalue floor for [`inv_sqrt_psd`].
pub const DEFAULT_PSD_FLOOR: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

/// Dense symmetric matrix. Entries are stored exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix, averaging `m` with its transpose. Fails if the
    /// matrix is not square, is empty, holds non-finite values or is visibly
    /// asymmetric (relative deviation above 1e-8).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let scale = 1.0 + m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::InvalidMatrix(format!("asymmetry {asym:.3e}")));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without checking for asymmetry.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    /// `vᵀ S v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    /// Linear combination `Σ w_k S_k` of symmetric matrices of equal size.
    pub fn weighted_sum<'a>(terms: impl IntoIterator<Item = (f64, &'a SymMatrix)>) -> Option<SymMatrix> {
        let mut acc: Option<DMatrix<f64>> = None;
        for (w, s) in terms {
            match acc.as_mut() {
                None => acc = Some(&s.0 * w),
                Some(a) => *a += &s.0 * w,
            }
        }
        acc.map(SymMatrix::symmetrize)
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl TryFrom<DMatrix<f64>> for SymMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

/// Eigenvalues sorted in descending order with matching orthonormal
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// Column `k` (0-based) of the eigenvector matrix, sign-normalized so the
    /// largest-magnitude entry is positive.
    pub fn vector(&self, k: usize) -> DVector<f64> {
        let mut v = self.vectors.column(k).into_owned();
        super::canonical_sign(&mut v);
        v
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }

    /// Smallest eigenvalue.
    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps over all off-diagonal pairs until the off-diagonal Frobenius norm
/// drops below `1e-12 * ||S||_F`.
pub fn sym_eigen(s: &SymMatrix) -> Result<EigenDecomposition> {
    let n = s.dim();
    if s.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let mut a = s.0.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = a.norm();
    let target = OFF_DIAG_TOL * norm;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // descending; equal values keep their original (index) order
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(EigenDecomposition { values, vectors })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

// A <- Jᵀ A J and V <- V J for the plane rotation J(p, q, c, s).
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Inverse symmetric square root. Eigenvalues below `floor` are clipped to
/// `floor` before inversion.
pub fn inv_sqrt_psd(s: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(s)?;
    let d = eig.values.map(|l| 1.0 / l.max(floor).sqrt());
    let r = &eig.vectors * DMatrix::from_diagonal(&d) * eig.vectors.transpose();
    Ok(SymMatrix::symmetrize(r))
}
