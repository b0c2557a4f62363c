//! Starting values for the ADMM.
//!
//! Components are 0-based throughout: component `0` is the first PC. The
//! start for a component averages the unpenalized solution (per-source
//! eigenvectors) with the fully sparse limit and projects the average onto
//! the feasible set defined by the prior loadings.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::admm::project_orthogonal;
use crate::error::{Error, Result};
use crate::numerics::{canonical_sign, sym_eigen};
use crate::types::{CovarianceSet, LoadingsMatrix, LoadingsSet};

/// The two limiting solutions of the sparse problem for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremePair {
    /// Unpenalized solution.
    pub y0: LoadingsMatrix,
    /// Fully sparse limit; one-hot per source.
    pub yinf: LoadingsMatrix,
    pub component: usize,
}

fn check_component(covset: &CovarianceSet, component: usize) -> Result<()> {
    if component >= covset.p() {
        return Err(Error::Index(format!("component {component} with p = {}", covset.p())));
    }
    Ok(())
}

/// Per-source eigenvector of the `component`-th largest eigenvalue.
pub fn eigen_start(covset: &CovarianceSet, component: usize) -> Result<LoadingsMatrix> {
    check_component(covset, component)?;
    let mut v = LoadingsMatrix::zeros(covset.p(), covset.n_sources());
    for (i, s) in covset.sigmas.iter().enumerate() {
        let eig = sym_eigen(s)?;
        v.0.set_column(i, &eig.vector(component));
    }
    Ok(v)
}

fn argmax_unused(scores: impl Iterator<Item = f64>, used: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in scores.enumerate() {
        if used(j) {
            continue;
        }
        // strict comparison keeps the lowest index on ties
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
}

/// Sparse limit for large penalties, excluding variables already used by
/// `prior_extremes`. With `gamma == 1` each source picks its own largest
/// variance variable; otherwise one variable maximizing the summed variance is
/// shared by all sources.
pub fn extreme_sparse(
    covset: &CovarianceSet,
    gamma: f64,
    component: usize,
    prior_extremes: &[LoadingsMatrix],
) -> Result<LoadingsMatrix> {
    check_component(covset, component)?;
    let (p, n) = (covset.p(), covset.n_sources());
    let mut v = LoadingsMatrix::zeros(p, n);
    let exhausted = || Error::Index(format!("no unused variable left for component {component}"));
    if gamma >= 1.0 {
        for (i, s) in covset.sigmas.iter().enumerate() {
            let used = |j: usize| prior_extremes.iter().any(|e| e.0[(j, i)] != 0.0);
            let j = argmax_unused(s.diagonal().iter().cloned(), used).ok_or_else(exhausted)?;
            v.0[(j, i)] = 1.0;
        }
    } else {
        let total = covset.sigmas.iter().fold(DVector::zeros(p), |acc, s| acc + s.diagonal());
        let used = |j: usize| prior_extremes.iter().any(|e| e.0.row(j).iter().any(|x| *x != 0.0));
        let j = argmax_unused(total.iter().cloned(), used).ok_or_else(exhausted)?;
        v.0.row_mut(j).fill(1.0);
    }
    Ok(v)
}

/// Shared sparse limit for correlation matrices, where all variances tie:
/// the variable with the largest absolute entry of the source-averaged,
/// eigenvalue-scaled eigenvector.
pub fn correlation_extreme(
    covset: &CovarianceSet,
    component: usize,
    prior_extremes: &[LoadingsMatrix],
) -> Result<LoadingsMatrix> {
    check_component(covset, component)?;
    let (p, n) = (covset.p(), covset.n_sources());
    let mut avg = DVector::zeros(p);
    for s in &covset.sigmas {
        let eig = sym_eigen(s)?;
        avg += eig.vector(component) * eig.values[component].max(0.0).sqrt();
    }
    avg /= n as f64;
    let used = |j: usize| prior_extremes.iter().any(|e| e.0.row(j).iter().any(|x| *x != 0.0));
    // equal magnitudes up to rounding count as ties
    let scores = avg.iter().map(|x| (x.abs() * 1e9).round());
    let j = argmax_unused(scores, used)
        .ok_or_else(|| Error::Index(format!("no unused variable left for component {component}")))?;
    let mut v = LoadingsMatrix::zeros(p, n);
    v.0.row_mut(j).fill(1.0);
    Ok(v)
}

/// Sparse limits for components `0..=component`, built by iterative exclusion.
pub fn extreme_sequence(covset: &CovarianceSet, gamma: f64, component: usize) -> Result<Vec<LoadingsMatrix>> {
    let corr = covset.is_correlation();
    let mut out: Vec<LoadingsMatrix> = Vec::with_capacity(component + 1);
    for k in 0..=component {
        let e = if corr { correlation_extreme(covset, k, &out)? } else { extreme_sparse(covset, gamma, k, &out)? };
        out.push(e);
    }
    Ok(out)
}

pub fn extreme_pair(covset: &CovarianceSet, gamma: f64, component: usize) -> Result<ExtremePair> {
    let y0 = eigen_start(covset, component)?;
    let yinf = extreme_sequence(covset, gamma, component)?.pop().expect("nonempty");
    Ok(ExtremePair { y0, yinf, component })
}

/// Projected average of the two extreme solutions.
pub fn make_start(covset: &CovarianceSet, gamma: f64, component: usize, priors: &LoadingsSet) -> Result<LoadingsMatrix> {
    let pair = extreme_pair(covset, gamma, component)?;
    let avg = LoadingsMatrix((pair.y0.0 + pair.yinf.0) * 0.5);
    project_orthogonal(&avg, priors).map_err(|e| match e {
        Error::DegenerateProjection { source_index } => Error::DegenerateStart { component, source_index },
        other => other,
    })
}

/// [`make_start`], recovering from a degenerate average by adding a tiny
/// random direction orthogonal to the priors and projecting again.
pub fn make_start_or_perturb(
    covset: &CovarianceSet,
    gamma: f64,
    component: usize,
    priors: &LoadingsSet,
    seed: u64,
) -> Result<LoadingsMatrix> {
    match make_start(covset, gamma, component, priors) {
        Err(Error::DegenerateStart { .. }) => {
            let pair = extreme_pair(covset, gamma, component)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(component as u64);
            let (p, n) = (covset.p(), covset.n_sources());
            let noise = LoadingsMatrix(DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal)));
            let direction = project_orthogonal(&noise, priors)?;
            let avg = LoadingsMatrix((pair.y0.0 + pair.yinf.0) * 0.5 + direction.0 * 1e-6);
            project_orthogonal(&avg, priors)
        }
        other => other,
    }
}

/// Random feasible start: standard normal entries projected onto the
/// feasible set.
pub fn random_start(p: usize, n_sources: usize, priors: &LoadingsSet, rng: &mut impl Rng) -> Result<LoadingsMatrix> {
    let raw = LoadingsMatrix(DMatrix::from_fn(p, n_sources, |_, _| rng.sample::<f64, _>(StandardNormal)));
    project_orthogonal(&raw, priors)
}

/// Canonical sign for every source block.
pub fn canonicalize(v: &mut LoadingsMatrix) {
    for i in 0..v.n_sources() {
        let mut c = v.column(i);
        canonical_sign(&mut c);
        v.0.set_column(i, &c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SymMatrix;
    use proptest::prelude::*;

    fn diag_set(diags: &[&[f64]]) -> CovarianceSet {
        CovarianceSet::from_covariances(diags.iter().map(|d| SymMatrix::from_diagonal(d)).collect()).unwrap()
    }

    fn g2(v: &DMatrix<f64>) -> f64 {
        v.row_iter().map(|r| r.norm()).sum()
    }

    #[test]
    fn diagonal_covariances_give_one_hot_eigenvectors() {
        let set = diag_set(&[&[1.0, 3.0, 2.0], &[5.0, 1.0, 2.0]]);
        let v = eigen_start(&set, 0).unwrap();
        assert_eq!(v.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(v.column(1).as_slice(), &[1.0, 0.0, 0.0]);
        let v2 = eigen_start(&set, 1).unwrap();
        for i in 0..2 {
            assert_eq!(v.column(i).dot(&v2.column(i)), 0.0);
        }
        assert!(matches!(eigen_start(&set, 3), Err(Error::Index(_))));
    }

    #[test]
    fn shared_extreme_follows_variance_order() {
        let set = diag_set(&[&[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0]]);
        let seq = extreme_sequence(&set, 0.0, 1).unwrap();
        assert_eq!(seq[1].row(1).as_slice(), &[1.0, 1.0]);
        assert_eq!(seq[1].0.sum(), 2.0);
        assert!(matches!(extreme_sequence(&set, 0.0, 3), Err(Error::Index(_))));
    }

    #[test]
    fn local_extreme_differs_per_source() {
        let set = diag_set(&[&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]]);
        let v = extreme_sparse(&set, 1.0, 0, &[]).unwrap();
        assert_eq!(v.column(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(v.column(1).as_slice(), &[0.0, 0.0, 1.0]);
        let next = extreme_sparse(&set, 1.0, 1, &[v]).unwrap();
        assert_eq!(next.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(next.column(1).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn correlation_ties_pick_lowest_index() {
        let id = diag_set(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        assert!(id.is_correlation());
        let v = correlation_extreme(&id, 0, &[]).unwrap();
        assert_eq!(v.row(0).as_slice(), &[1.0, 1.0]);

        let r = 0.4;
        let eq = SymMatrix::new(DMatrix::from_fn(4, 4, |a, b| if a == b { 1.0 } else { r })).unwrap();
        let set = CovarianceSet::from_covariances(vec![eq]).unwrap();
        let v = correlation_extreme(&set, 0, &[]).unwrap();
        assert_eq!(v.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn correlation_extreme_matches_direct_recomputation() {
        let ar1 = |phi: f64, p: usize| {
            SymMatrix::new(DMatrix::from_fn(p, p, |a, b| phi.powi((a as i32 - b as i32).abs()))).unwrap()
        };
        let set = CovarianceSet::from_covariances(vec![ar1(0.6, 5), ar1(0.3, 5)]).unwrap();
        for k in 0..2 {
            let mut avg = DVector::zeros(5);
            for s in &set.sigmas {
                let e = sym_eigen(s).unwrap();
                avg += e.vector(k) * e.values[k].sqrt();
            }
            let prior = if k == 0 { vec![] } else { vec![correlation_extreme(&set, 0, &[]).unwrap()] };
            let used: Vec<usize> = prior.iter().flat_map(|p| (0..5).filter(|&j| p.0[(j, 0)] != 0.0)).collect();
            let mut best = None;
            for j in 0..5 {
                if used.contains(&j) {
                    continue;
                }
                if best.is_none_or(|(_, b): (usize, f64)| avg[j].abs() > b + 1e-9) {
                    best = Some((j, avg[j].abs()));
                }
            }
            let v = correlation_extreme(&set, k, &prior).unwrap();
            assert_eq!(v.0[(best.unwrap().0, 0)], 1.0);
        }
    }

    #[test]
    fn start_for_first_component_is_normalized_average() {
        let set = diag_set(&[&[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0]]);
        let s = make_start(&set, 0.5, 0, &LoadingsSet::default()).unwrap();
        // y0 == yinf here
        assert_eq!(s.column(0).as_slice(), &[1.0, 0.0, 0.0]);
        let b = CovarianceSet::from_covariances(vec![SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap()]).unwrap();
        let s = make_start(&b, 0.5, 0, &LoadingsSet::default()).unwrap();
        let y0 = eigen_start(&b, 0).unwrap().column(0);
        let avg = (&y0 + DVector::from_vec(vec![1.0, 0.0])) * 0.5;
        assert!((s.column(0) - avg.normalize()).amax() < 1e-15);
    }

    #[test]
    fn degenerate_start_is_reported_and_recovered() {
        let set = diag_set(&[&[3.0, 2.0, 1.0]]);
        // prior spans the only direction of both extremes for component 1 (e_2)
        let mut prior = LoadingsMatrix::zeros(3, 1);
        prior.0[(1, 0)] = 1.0;
        let priors = LoadingsSet { components: vec![prior] };
        assert!(matches!(make_start(&set, 0.5, 1, &priors), Err(Error::DegenerateStart { .. })));
        let s = make_start_or_perturb(&set, 0.5, 1, &priors, 1).unwrap();
        assert!((s.column(0).norm() - 1.0).abs() < 1e-12);
        assert!(s.0[(1, 0)].abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn l1_of_unit_vector_at_least_one(p in 2usize..=6, raw in proptest::collection::vec(-1.0f64..1.0, 6), hot in 0usize..6) {
            let mut u = DVector::from_iterator(p, raw.iter().take(p).cloned());
            if u.norm() < 1e-6 { u[0] = 1.0; }
            let u = u.normalize();
            prop_assert!(u.lp_norm(1) >= 1.0 - 1e-12);
            let mut e = DVector::<f64>::zeros(p);
            e[hot % p] = -1.0;
            prop_assert!((e.lp_norm(1) - 1.0_f64).abs() < 1e-9);
            // ||u||_1^2 = ||u||_2^2 + 2 sum_{j<k} |u_j||u_k|: equality needs every cross term to vanish
            let mut cross = 0.0;
            for j in 0..p { for k in j + 1..p { cross += 2.0 * (u[j] * u[k]).abs(); } }
            prop_assert!((u.lp_norm(1).powi(2) - 1.0 - cross).abs() < 1e-12);
            let nonzero = u.iter().filter(|x| **x != 0.0).count();
            prop_assert_eq!(cross == 0.0, nonzero == 1);
        }

        #[test]
        fn group_norm_of_unit_columns_at_least_sqrt_n(p in 2usize..=6, n in 1usize..=4, raw in proptest::collection::vec(-1.0f64..1.0, 24)) {
            let mut v = DMatrix::from_fn(p, n, |j, i| raw[j * 4 + i]);
            for mut c in v.column_iter_mut() {
                if c.norm() < 1e-6 { c[0] = 1.0; }
                let nrm = c.norm();
                c /= nrm;
            }
            prop_assert!(g2(&v) >= (n as f64).sqrt() - 1e-12);
            let mut single = DMatrix::zeros(p, n);
            single.row_mut(p - 1).fill(-1.0);
            prop_assert!((g2(&single) - (n as f64).sqrt()).abs() < 1e-9);
        }

        #[test]
        fn shared_extreme_is_best_one_hot(p in 2usize..=6, n in 1usize..=3, raw in proptest::collection::vec(0.1f64..5.0, 18)) {
            let set = CovarianceSet::from_covariances(
                (0..n).map(|i| SymMatrix::from_diagonal(&raw[i * 6..i * 6 + p])).collect()).unwrap();
            let v = extreme_sparse(&set, 0.5, 0, &[]).unwrap();
            let var = set.explained_variance(&v);
            for j in 0..p {
                let mut cand = LoadingsMatrix::zeros(p, n);
                cand.0.row_mut(j).fill(1.0);
                prop_assert!(g2(&v.0) <= g2(&cand.0) + 1e-12);
                prop_assert!(var >= set.explained_variance(&cand) - 1e-12);
            }
        }
    }
}
