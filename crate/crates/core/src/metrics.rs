//! Scores, orthogonal distances, subspace angles and sparsity recovery
//! metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CovarianceSet, LoadingsMatrix, LoadingsSet, MultiSourceData};

/// Entries with smaller magnitude count as zero.
pub const ZERO_TOL: f64 = 1e-8;

/// `n x k` scores, one row per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix(pub DMatrix<f64>);

fn check_shapes(data: &MultiSourceData, covset: &CovarianceSet, loadings: &LoadingsSet) -> Result<()> {
    if loadings.is_empty() {
        return Err(Error::InvalidArgument("no loadings".into()));
    }
    if data.p() != covset.p() || data.n_sources() != covset.n_sources() {
        return Err(Error::Dimension(format!(
            "data is {} variables x {} sources, covariances {} x {}",
            data.p(),
            data.n_sources(),
            covset.p(),
            covset.n_sources()
        )));
    }
    for c in &loadings.components {
        if c.p() != data.p() || c.n_sources() != data.n_sources() {
            return Err(Error::Dimension("loadings do not match the data".into()));
        }
    }
    Ok(())
}

fn centered(data: &MultiSourceData, covset: &CovarianceSet, row: usize) -> DVector<f64> {
    let i = data.source_of(row);
    data.x().row(row).transpose() - &covset.mus[i]
}

/// Locally centered observations projected on the loadings of their source.
pub fn compute_scores(data: &MultiSourceData, covset: &CovarianceSet, loadings: &LoadingsSet) -> Result<ScoreMatrix> {
    check_shapes(data, covset, loadings)?;
    let k = loadings.len();
    let bases: Vec<DMatrix<f64>> = (0..data.n_sources()).map(|i| loadings.source_basis(i).expect("nonempty")).collect();
    let mut t = DMatrix::zeros(data.n(), k);
    for r in 0..data.n() {
        let x = centered(data, covset, r);
        let s = bases[data.source_of(r)].tr_mul(&x);
        t.row_mut(r).copy_from(&s.transpose());
    }
    Ok(ScoreMatrix(t))
}

/// Euclidean distance of each centered observation to its reconstruction.
pub fn orthogonal_distance(data: &MultiSourceData, covset: &CovarianceSet, loadings: &LoadingsSet) -> Result<DVector<f64>> {
    let scores = compute_scores(data, covset, loadings)?;
    let bases: Vec<DMatrix<f64>> = (0..data.n_sources()).map(|i| loadings.source_basis(i).expect("nonempty")).collect();
    Ok(DVector::from_iterator(
        data.n(),
        (0..data.n()).map(|r| {
            let x = centered(data, covset, r);
            let t = scores.0.row(r).transpose();
            (x - &bases[data.source_of(r)] * t).norm()
        }),
    ))
}

fn orthonormal_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::DegenerateSubspace);
    }
    let mut q = m.clone();
    for k in 0..q.ncols() {
        // two passes of Gram-Schmidt keep the basis orthonormal to rounding
        for _ in 0..2 {
            for l in 0..k {
                let proj = q.column(l).dot(&q.column(k));
                let ql = q.column(l).into_owned();
                q.column_mut(k).axpy(-proj, &ql, 1.0);
            }
        }
        let n = q.column(k).norm();
        if !(n > 1e-10 * scale) {
            return Err(Error::DegenerateSubspace);
        }
        q.column_mut(k).unscale_mut(n);
    }
    Ok(q)
}

/// Largest principal angle between the column spans, divided by `pi / 2`.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("subspaces of shape {:?} and {:?}", a.shape(), b.shape())));
    }
    let qa = orthonormal_columns(a)?;
    let qb = orthonormal_columns(b)?;
    let cos = (qa.tr_mul(&qb)).singular_values().min().clamp(0.0, 1.0);
    let resid = &qb - &qa * qa.tr_mul(&qb);
    let sin = resid.singular_values().max().clamp(0.0, 1.0);
    // arcsin is accurate for small angles, arccos for large ones
    let theta = if cos > std::f64::consts::FRAC_1_SQRT_2 { sin.asin() } else { cos.acos() };
    Ok(theta / std::f64::consts::FRAC_PI_2)
}

/// Angle per source between the spans of the two loadings sets.
pub fn source_angles(truth: &LoadingsSet, est: &LoadingsSet) -> Result<Vec<f64>> {
    let (Some(first_t), Some(first_e)) = (truth.components.first(), est.components.first()) else {
        return Err(Error::InvalidArgument("no loadings".into()));
    };
    if first_t.n_sources() != first_e.n_sources() || truth.len() != est.len() {
        return Err(Error::Dimension("loadings sets differ in shape".into()));
    }
    (0..first_t.n_sources())
        .map(|i| subspace_angle(&truth.source_basis(i).expect("nonempty"), &est.source_basis(i).expect("nonempty")))
        .collect()
}

/// Zero/nonzero confusion counts of one source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityConfusion {
    /// Truly zero and estimated zero.
    pub zero_zero: usize,
    pub zero_nonzero: usize,
    pub nonzero_zero: usize,
    pub nonzero_nonzero: usize,
}

impl SparsityConfusion {
    pub fn total(&self) -> usize {
        self.zero_zero + self.zero_nonzero + self.nonzero_zero + self.nonzero_nonzero
    }
}

pub fn confusion(truth: &LoadingsMatrix, est: &LoadingsMatrix) -> Result<Vec<SparsityConfusion>> {
    if truth.0.shape() != est.0.shape() {
        return Err(Error::Dimension(format!("loadings of shape {:?} and {:?}", truth.0.shape(), est.0.shape())));
    }
    Ok((0..truth.n_sources())
        .map(|i| {
            let mut c = SparsityConfusion::default();
            for (t, e) in truth.0.column(i).iter().zip(est.0.column(i).iter()) {
                match (t.abs() < ZERO_TOL, e.abs() < ZERO_TOL) {
                    (true, true) => c.zero_zero += 1,
                    (true, false) => c.zero_nonzero += 1,
                    (false, true) => c.nonzero_zero += 1,
                    (false, false) => c.nonzero_nonzero += 1,
                }
            }
            c
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Share of truly nonzero entries estimated nonzero, averaged over sources.
    pub tnr: f64,
    /// Share of truly zero entries estimated zero, averaged over the sources
    /// that have true zeros; `None` when none do.
    pub tpr: Option<f64>,
    pub gmean: Option<f64>,
    /// F1 of zero detection, counts pooled over sources.
    pub f1: f64,
    /// Share of all entries whose zero status is right.
    pub z_measure: f64,
    /// Estimated zeros over `N (p - 1)`.
    pub sparsity_fraction: f64,
    /// Sources left out of the TPR average.
    pub tpr_excluded: Vec<usize>,
}

pub fn classification_metrics(truth: &LoadingsMatrix, est: &LoadingsMatrix) -> Result<ClassificationMetrics> {
    let conf = confusion(truth, est)?;
    let n = conf.len() as f64;
    let mut tnr = 0.0;
    let mut tpr_sum = 0.0;
    let mut tpr_count = 0usize;
    let mut tpr_excluded = Vec::new();
    let mut pooled = SparsityConfusion::default();
    for (i, c) in conf.iter().enumerate() {
        let nonzero = c.nonzero_zero + c.nonzero_nonzero;
        tnr += if nonzero > 0 { c.nonzero_nonzero as f64 / nonzero as f64 } else { 1.0 };
        let zero = c.zero_zero + c.zero_nonzero;
        if zero > 0 {
            tpr_sum += c.zero_zero as f64 / zero as f64;
            tpr_count += 1;
        } else {
            tpr_excluded.push(i);
        }
        pooled.zero_zero += c.zero_zero;
        pooled.zero_nonzero += c.zero_nonzero;
        pooled.nonzero_zero += c.nonzero_zero;
        pooled.nonzero_nonzero += c.nonzero_nonzero;
    }
    let tnr = tnr / n;
    let tpr = (tpr_count > 0).then(|| tpr_sum / tpr_count as f64);
    let f1_denom = 2 * pooled.zero_zero + pooled.zero_nonzero + pooled.nonzero_zero;
    let f1 = if f1_denom == 0 { 1.0 } else { 2.0 * pooled.zero_zero as f64 / f1_denom as f64 };
    let total = pooled.total() as f64;
    let est_zeros = (pooled.zero_zero + pooled.nonzero_zero) as f64;
    let slots = (est.n_sources() * est.p().saturating_sub(1)) as f64;
    Ok(ClassificationMetrics {
        tnr,
        tpr,
        gmean: tpr.map(|t| (t * tnr).sqrt()),
        f1,
        z_measure: (pooled.zero_zero + pooled.nonzero_nonzero) as f64 / total,
        sparsity_fraction: if slots > 0.0 { est_zeros / slots } else { 0.0 },
        tpr_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SymMatrix;
    use proptest::prelude::*;

    fn data_and_set() -> (MultiSourceData, CovarianceSet) {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.5]);
        let b = DMatrix::from_row_slice(2, 2, &[4.0, 4.0, -2.0, 1.0]);
        let data = MultiSourceData::from_blocks(&[a, b]).unwrap();
        let set = CovarianceSet::new(
            vec![SymMatrix::identity(2), SymMatrix::identity(2)],
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
        )
        .unwrap();
        (data, set)
    }

    fn unit(p: usize, n: usize, j: usize) -> LoadingsMatrix {
        let mut v = LoadingsMatrix::zeros(p, n);
        v.0.row_mut(j).fill(1.0);
        v
    }

    #[test]
    fn scores_select_coordinates() {
        let (data, set) = data_and_set();
        let basis = LoadingsSet { components: vec![unit(2, 2, 1), unit(2, 2, 0)] };
        let t = compute_scores(&data, &set, &basis).unwrap().0;
        for r in 0..data.n() {
            let mu = &set.mus[data.source_of(r)];
            assert_eq!(t[(r, 0)], data.x()[(r, 1)] - mu[1]);
            assert_eq!(t[(r, 1)], data.x()[(r, 0)] - mu[0]);
        }
        let od = orthogonal_distance(&data, &set, &basis).unwrap();
        assert!(od.amax() < 1e-15);
    }

    #[test]
    fn centre_maps_to_zero_score() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 3.0]);
        let data = MultiSourceData::from_blocks(&[a]).unwrap();
        let set = CovarianceSet::new(vec![SymMatrix::identity(2)], vec![DVector::from_vec(vec![1.0, 0.0])]).unwrap();
        let v = LoadingsMatrix(DMatrix::from_column_slice(2, 1, &[0.6, 0.8]));
        let t = compute_scores(&data, &set, &LoadingsSet { components: vec![v.clone()] }).unwrap().0;
        assert_eq!(t[(0, 0)], 0.0);
        // second row centered is (2, 3): distance to the line along (0.6, 0.8)
        let od = orthogonal_distance(&data, &set, &LoadingsSet { components: vec![v] }).unwrap();
        assert!((od[1] - (2.0_f64 * 0.8 - 3.0 * 0.6).abs()).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        let (data, set) = data_and_set();
        let bad = LoadingsSet { components: vec![unit(3, 2, 0)] };
        assert!(matches!(compute_scores(&data, &set, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn angle_cases() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let d = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(subspace_angle(&e1, &e1).unwrap(), 0.0);
        assert!((subspace_angle(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        assert!((subspace_angle(&e1, &d).unwrap() - 0.5).abs() < 1e-15);
        let rank1 = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(subspace_angle(&rank1, &rank1), Err(Error::DegenerateSubspace)));
    }

    fn orth(seed: &[f64], p: usize, k: usize) -> DMatrix<f64> {
        orthonormal_columns(&DMatrix::from_column_slice(p, k, &seed[..p * k])).unwrap()
    }

    proptest! {
        #[test]
        fn angle_is_a_subspace_distance(
            a in proptest::collection::vec(-1.0f64..1.0, 8),
            b in proptest::collection::vec(-1.0f64..1.0, 8),
            t in 0.0f64..6.3,
            flip in any::<bool>(),
        ) {
            let (qa, qb) = (orth(&a, 4, 2), orth(&b, 4, 2));
            let ab = subspace_angle(&qa, &qb).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - subspace_angle(&qb, &qa).unwrap()).abs() < 1e-10);
            let rot = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            let mut turned = &qb * rot;
            if flip {
                turned.column_mut(0).neg_mut();
            }
            prop_assert!((ab - subspace_angle(&qa, &turned).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn gmean_bounds(mask in proptest::collection::vec(0u8..4, 12)) {
            let truth = DMatrix::from_fn(6, 2, |j, i| if mask[j * 2 + i] & 1 == 0 { 0.0 } else { 0.5 });
            let mut truth = truth;
            truth[(0, 0)] = 0.5;
            truth[(0, 1)] = 0.5;
            let est = DMatrix::from_fn(6, 2, |j, i| if mask[j * 2 + i] & 2 == 0 { 0.0 } else { 0.5 });
            let m = classification_metrics(&LoadingsMatrix(truth), &LoadingsMatrix(est)).unwrap();
            if let (Some(g), Some(tpr)) = (m.gmean, m.tpr) {
                prop_assert!(g <= m.tnr.max(tpr) + 1e-15);
                prop_assert_eq!(g == 0.0, m.tnr == 0.0 || tpr == 0.0);
            }
        }

        #[test]
        fn od_ignores_components_orthogonal_to_residual(x in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let data = MultiSourceData::from_blocks(&[DMatrix::from_row_slice(2, 3, &x)]).unwrap();
            let set = CovarianceSet::new(vec![SymMatrix::identity(3)], vec![DVector::zeros(3)]).unwrap();
            let one = LoadingsSet { components: vec![unit(3, 1, 0)] };
            let od1 = orthogonal_distance(&data, &set, &one).unwrap();
            // adding e_2 removes the e_2 part of the residual; e_3 stays
            let two = LoadingsSet { components: vec![unit(3, 1, 0), unit(3, 1, 1)] };
            let od2 = orthogonal_distance(&data, &set, &two).unwrap();
            for r in 0..2 {
                let expect = (od1[r].powi(2) - x[r * 3 + 1].powi(2)).max(0.0).sqrt();
                prop_assert!((od2[r] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn classification_cases() {
        let truth = LoadingsMatrix(DMatrix::from_row_slice(3, 2, &[0.6, 0.0, 0.8, 1.0, 0.0, 0.0]));
        let perfect = classification_metrics(&truth, &truth).unwrap();
        assert_eq!((perfect.tnr, perfect.tpr, perfect.gmean, perfect.f1, perfect.z_measure), (1.0, Some(1.0), Some(1.0), 1.0, 1.0));

        let dense = LoadingsMatrix(DMatrix::from_element(3, 2, 0.5));
        let m = classification_metrics(&truth, &dense).unwrap();
        assert_eq!((m.tpr, m.gmean, m.sparsity_fraction), (Some(0.0), Some(0.0), 0.0));

        // two errors: source 0 row 1 zeroed, source 1 row 2 kept
        let est = LoadingsMatrix(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.8, 0.0, 0.6]));
        let m = classification_metrics(&truth, &est).unwrap();
        assert!((m.tnr - 0.5 * (0.5 + 1.0)).abs() < 1e-15);
        assert!((m.tpr.unwrap() - 0.5 * (1.0 + 0.5)).abs() < 1e-15);
        assert!((m.z_measure - 4.0 / 6.0).abs() < 1e-15);
        // pooled zero detection: 2 hits, 1 false alarm, 1 miss
        assert!((m.f1 - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.sparsity_fraction - 3.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn sources_without_true_zeros_are_excluded() {
        let truth = LoadingsMatrix(DMatrix::from_row_slice(2, 2, &[0.6, 1.0, 0.8, 0.0]));
        let m = classification_metrics(&truth, &truth).unwrap();
        assert_eq!(m.tpr_excluded, vec![0]);
        assert_eq!(m.tpr, Some(1.0));
        let dense = LoadingsMatrix(DMatrix::from_element(2, 1, 0.7));
        assert_eq!(classification_metrics(&dense, &dense).unwrap().tpr, None);
    }
}
