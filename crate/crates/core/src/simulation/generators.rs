use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, SymMatrix};

/// Sparse loading matrices of the two base sources and the shared
/// eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalLoadings {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub d: DVector<f64>,
}

pub fn canonical_loadings(p: usize) -> Result<CanonicalLoadings> {
    if p < 6 {
        return Err(Error::InvalidArgument(format!("scenario needs p >= 6, got {p}")));
    }
    let (h, q) = (0.5f64.sqrt(), 0.5);
    let mut p1 = DMatrix::identity(p, p);
    #[rustfmt::skip]
    let block1 = DMatrix::from_row_slice(6, 6, &[
        h,   0.0, -h,  0.0, 0.0, 0.0,
        q,   0.0, q,   0.0, -h,  0.0,
        0.0, h,   0.0, -h,  0.0, 0.0,
        0.0, q,   0.0, q,   0.0, -h,
        q,   0.0, q,   0.0, h,   0.0,
        0.0, q,   0.0, q,   0.0, h,
    ]);
    p1.view_mut((0, 0), (6, 6)).copy_from(&block1);

    let (a, b) = ((2.0f64 / 3.0).sqrt(), (1.0f64 / 3.0).sqrt());
    let mut p2 = DMatrix::identity(p, p);
    #[rustfmt::skip]
    let block2 = DMatrix::from_row_slice(4, 4, &[
        a,   0.0, -b,  0.0,
        b,   0.0, a,   0.0,
        0.0, b,   0.0, -a,
        0.0, a,   0.0, b,
    ]);
    p2.view_mut((0, 0), (4, 4)).copy_from(&block2);

    let mut d = DVector::from_element(p, 1.0);
    d.rows_mut(0, 4).copy_from_slice(&[2.0, 1.5, 1.25, 1.125]);
    Ok(CanonicalLoadings { p1, p2, d })
}

impl CanonicalLoadings {
    pub fn sigma1(&self) -> SymMatrix {
        SymMatrix::symmetrize(&self.p1 * DMatrix::from_diagonal(&self.d) * self.p1.transpose())
    }

    pub fn sigma2(&self) -> SymMatrix {
        SymMatrix::symmetrize(&self.p2 * DMatrix::from_diagonal(&self.d) * self.p2.transpose())
    }
}

/// Perturbed and exact covariances of the two-source scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario1 {
    pub perturbed: [SymMatrix; 2],
    pub exact: [SymMatrix; 2],
}

/// Symmetric noise (upper triangle drawn, mirrored) added to both exact
/// covariances; negative eigenvalues are lifted to `1e-8`.
pub fn scenario1_covariances(p: usize, noise_sd: f64, rng: &mut impl Rng) -> Result<Scenario1> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sd must be nonnegative, got {noise_sd}")));
    }
    let c = canonical_loadings(p)?;
    let exact = [c.sigma1(), c.sigma2()];
    let mut perturbed = exact.clone();
    if noise_sd > 0.0 {
        for s in perturbed.iter_mut() {
            let mut m = s.as_matrix().clone();
            for j in 0..p {
                for k in j..p {
                    let e = noise_sd * rng.sample::<f64, _>(StandardNormal);
                    m[(j, k)] += e;
                    if j != k {
                        m[(k, j)] += e;
                    }
                }
            }
            *s = clip_psd(&SymMatrix::symmetrize(m), 1e-8)?;
        }
    }
    Ok(Scenario1 { perturbed, exact })
}

fn clip_psd(s: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(s)?;
    if eig.min_value() >= floor {
        return Ok(s.clone());
    }
    let clipped = eig.values.map(|v| v.max(floor));
    Ok(SymMatrix::symmetrize(&eig.vectors * DMatrix::from_diagonal(&clipped) * eig.vectors.transpose()))
}

/// `N` covariances shifting linearly from the first base covariance to the
/// second.
pub fn scenario2_covariances(n_sources: usize, p: usize) -> Result<Vec<SymMatrix>> {
    if n_sources < 2 {
        return Err(Error::InvalidArgument(format!("need at least two sources, got {n_sources}")));
    }
    let c = canonical_loadings(p)?;
    let (s1, s2) = (c.sigma1(), c.sigma2());
    Ok((0..n_sources)
        .map(|i| {
            let t = i as f64 / (n_sources - 1) as f64;
            SymMatrix::weighted_sum([(1.0 - t, &s1), (t, &s2)]).expect("two terms")
        })
        .collect())
}

/// Shift of the outliers: `sqrt(2) (2, 4, 2, 4, 0, -1, 1)` followed by the
/// repeating block `(0, 1, -1)`.
pub fn outlier_shift(p: usize) -> DVector<f64> {
    let head = [2.0, 4.0, 2.0, 4.0, 0.0, -1.0, 1.0];
    let tail = [0.0, 1.0, -1.0];
    DVector::from_iterator(
        p,
        (0..p).map(|j| 2f64.sqrt() * if j < head.len() { head[j] } else { tail[(j - head.len()) % 3] }),
    )
}

/// Factor `L` with `L L' = S`, through the eigendecomposition so that
/// singular matrices are fine.
pub fn psd_factor(s: &SymMatrix) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(s)?;
    let roots = eig.values.map(|v| v.max(0.0).sqrt());
    Ok(&eig.vectors * DMatrix::from_diagonal(&roots))
}

/// Sample block with its outlier flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminatedSample {
    pub x: DMatrix<f64>,
    pub outlier: Vec<bool>,
}

/// `floor((1 - eps) n)` rows from `N(0, S)`, the rest from `N(mu_out, I)`.
pub fn sample_contaminated(sigma: &SymMatrix, n: usize, eps_out: f64, rng: &mut impl Rng) -> Result<ContaminatedSample> {
    if !(0.0..1.0).contains(&eps_out) {
        return Err(Error::InvalidArgument(format!("contamination must lie in [0, 1), got {eps_out}")));
    }
    let p = sigma.dim();
    let factor = psd_factor(sigma)?;
    let shift = outlier_shift(p);
    let n_clean = ((1.0 - eps_out) * n as f64 + 1e-9).floor() as usize;
    let mut x = DMatrix::zeros(n, p);
    let outlier: Vec<bool> = (0..n).map(|r| r >= n_clean).collect();
    for r in 0..n {
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let row = if r < n_clean {
            &factor * z
        } else {
            z + &shift
        };
        x.set_row(r, &row.transpose());
    }
    Ok(ContaminatedSample { x, outlier })
}
