use super::*;
use crate::numerics::sym_eigen;
use crate::start::extreme_sparse;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cov(p: usize, rng: &mut impl Rng) -> SymMatrix {
    let a = DMatrix::from_fn(p, p + 3, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&a * a.transpose() / (p as f64))
}

fn random_set(p: usize, n: usize, seed: u64) -> CovarianceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CovarianceSet::from_covariances((0..n).map(|_| random_cov(p, &mut rng)).collect()).unwrap()
}

fn block_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b).abs().min(1.0).acos() / std::f64::consts::FRAC_PI_2
}

#[test]
fn default_rho_on_identities() {
    let set = CovarianceSet::from_covariances(vec![SymMatrix::identity(6); 3]).unwrap();
    assert!((rho_default(&set, 0.0, &LoadingsSet::default()) - 3.0).abs() < 1e-15);
    assert!((rho_default(&set, 0.7, &LoadingsSet::default()) - 3.7).abs() < 1e-15);
}

#[test]
fn default_rho_drops_by_leading_eigenvalue() {
    let set = random_set(5, 3, 1);
    let eig: Vec<_> = set.sigmas.iter().map(|s| sym_eigen(s).unwrap()).collect();
    let mut v = LoadingsMatrix::zeros(5, 3);
    for (i, e) in eig.iter().enumerate() {
        v.0.set_column(i, &e.vector(0));
    }
    let before = rho_default(&set, 0.0, &LoadingsSet::default());
    let after = rho_default(&set, 0.0, &LoadingsSet { components: vec![v] });
    let drop: f64 = eig.iter().map(|e| e.values[0]).sum::<f64>() / 6.0;
    assert!((before - after - drop).abs() < 1e-10);
}

#[test]
fn projection_cases() {
    let v = LoadingsMatrix(DMatrix::from_column_slice(2, 1, &[3.0, 4.0]));
    let out = project_orthogonal(&v, &LoadingsSet::default()).unwrap();
    assert!((out.0[(0, 0)] - 0.6).abs() < 1e-15 && (out.0[(1, 0)] - 0.8).abs() < 1e-15);

    let prior = LoadingsMatrix(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]));
    let priors = LoadingsSet { components: vec![prior] };
    let ortho = LoadingsMatrix(DMatrix::from_column_slice(3, 1, &[0.0, 0.6, 0.8]));
    assert_eq!(project_orthogonal(&ortho, &priors).unwrap(), ortho);
    let parallel = LoadingsMatrix(DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0]));
    assert!(matches!(project_orthogonal(&parallel, &priors), Err(Error::DegenerateProjection { source_index: 0 })));
}

proptest! {
    #[test]
    fn projection_is_orthogonal_and_unit(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, n) = (6, 3);
        let set = random_set(p, n, seed);
        let mut basis = LoadingsSet::default();
        for k in 0..2 {
            let mut v = LoadingsMatrix::zeros(p, n);
            for i in 0..n {
                v.0.set_column(i, &sym_eigen(&set.sigmas[i]).unwrap().vector(k));
            }
            basis.components.push(v);
        }
        let raw = LoadingsMatrix(DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0)));
        let out = project_orthogonal(&raw, &basis).unwrap();
        prop_assert!(out.unit_norm_error() < 1e-12);
        for c in &basis.components {
            for i in 0..n {
                prop_assert!(c.column(i).dot(&out.column(i)).abs() < 1e-10);
            }
        }
    }
}

fn state_with(block: &DMatrix<f64>, rho: f64) -> AdmmState {
    let mut s = AdmmState::new(&LoadingsMatrix(block.clone()), rho);
    s.v1 = block.clone();
    s.v2 = block.clone();
    s.v3 = block.clone();
    s
}

#[test]
fn consensus_fixpoint() {
    let b = DMatrix::from_column_slice(2, 2, &[0.6, 0.8, 1.0, 0.0]);
    let mut s = state_with(&b, 2.0);
    consensus_and_duals(&mut s, 0.5, None).unwrap();
    assert!((&s.v0 - &b).amax() < 1e-15);
    assert!(s.u1.amax() < 1e-15 && s.u3.amax() < 1e-15);
}

#[test]
fn pure_lasso_ignores_group_block() {
    let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let mut s = state_with(&b, 1.0);
    s.v3 = DMatrix::from_column_slice(2, 1, &[50.0, 50.0]);
    consensus_and_duals(&mut s, 1.0, None).unwrap();
    assert!((&s.v0 - &b).amax() < 1e-15);
    assert_eq!(s.u3.amax(), 0.0);
    let mut s = state_with(&b, 1.0);
    s.v3 = DMatrix::from_column_slice(2, 1, &[50.0, 50.0]);
    consensus_and_duals(&mut s, 0.5, None).unwrap();
    assert!(s.v0[(1, 0)] > 10.0);
}

proptest! {
    #[test]
    fn dual_sum_telescopes(vals in proptest::collection::vec(-2.0f64..2.0, 12), rho in 0.5f64..5.0) {
        let m = |o: usize| DMatrix::from_column_slice(2, 2, &vals[o..o + 4]);
        let mut s = AdmmState::new(&LoadingsMatrix(m(0)), rho);
        s.v1 = m(0);
        s.v2 = m(4);
        s.v3 = m(8);
        let before = &s.u1 + &s.u2 + &s.u3;
        consensus_and_duals(&mut s, 0.5, None).unwrap();
        let after = &s.u1 + &s.u2 + &s.u3;
        // with zero duals the average makes sum_i (v_i - v0) vanish
        prop_assert!((after - before).amax() < 1e-12);
    }
}

#[test]
fn residual_formulas() {
    let b = DMatrix::from_column_slice(2, 2, &[0.6, 0.8, 1.0, 0.0]);
    let s = state_with(&b, 2.0);
    let res = residuals_and_tolerances(&s, &b, 0.5, 1e-4);
    assert_eq!((res.r, res.s), (0.0, 0.0));
    assert!(res.converged());

    let zero = DMatrix::zeros(2, 2);
    let res = residuals_and_tolerances(&state_with(&zero, 1.0), &zero, 0.5, 1e-4);
    assert!((res.eps_prime - 2.0 * 1e-4).abs() < 1e-18);
    assert!((res.eps_dual - 2.0 * 1e-4).abs() < 1e-18);

    let moved = &b * 1.1;
    let s1 = residuals_and_tolerances(&state_with(&b, 1.0), &moved, 0.5, 1e-4).s;
    let s2 = residuals_and_tolerances(&state_with(&b, 2.0), &moved, 0.5, 1e-4).s;
    assert!((s2 / s1 - 4.0).abs() < 1e-12);
}

#[test]
fn config_validation() {
    assert!(AdmmConfig::default().validate().is_ok());
    assert!(AdmmConfig { eps_admm: 0.0, ..Default::default() }.validate().is_err());
    assert!(AdmmConfig { rho_escalation: 1.0, ..Default::default() }.validate().is_err());
    assert!(AdmmConfig { rho_override: Some(-1.0), ..Default::default() }.validate().is_err());
}

fn tight() -> AdmmConfig {
    AdmmConfig { eps_admm: 1e-12, eps_root: 1e-12, m_max: 20_000, ..Default::default() }
}

#[test]
fn zero_penalty_recovers_eigenvectors() {
    for seed in 0..5 {
        let set = random_set(6, 3, 10 + seed);
        for gamma in [0.0, 0.5, 1.0] {
            let fit = fit_pca(&set, 0.0, gamma, 3, &tight()).unwrap();
            assert!(fit.converged());
            for (k, comp) in fit.loadings.components.iter().enumerate() {
                for i in 0..3 {
                    // oracle: leading eigenvector on the complement of the (thresholded)
                    // earlier blocks, with entries below eps_thr zeroed like the solver does
                    let mut proj = DMatrix::<f64>::identity(6, 6);
                    for prev in &fit.loadings.components[..k] {
                        let b = prev.column(i);
                        proj -= &b * b.transpose();
                    }
                    let reduced = SymMatrix::symmetrize(&proj * set.sigmas[i].as_matrix() * &proj);
                    let e = sym_eigen(&reduced).unwrap().vector(0).map(|x| if x.abs() < 5e-3 { 0.0 } else { x });
                    let a = block_angle(&e.normalize(), &comp.column(i));
                    assert!(a < 1e-4, "seed {seed} gamma {gamma} comp {k} source {i}: {a}");
                }
            }
        }
    }
}

#[test]
fn huge_penalty_gives_one_hot_extremes() {
    let set = random_set(6, 3, 7);
    let eta = 10.0 * set.total_trace();
    let res = solve_component(&set, eta, 1.0, &LoadingsSet::default(), &AdmmConfig::default()).unwrap();
    let expect = extreme_sparse(&set, 1.0, 0, &[]).unwrap();
    assert_eq!(res.loadings.0.map(|x| x.abs()), expect.0);

    let res = solve_component(&set, eta, 0.0, &LoadingsSet::default(), &AdmmConfig::default()).unwrap();
    let expect = extreme_sparse(&set, 0.0, 0, &[]).unwrap();
    assert_eq!(res.loadings.0.map(|x| x.abs()), expect.0);
}

#[test]
fn zero_covariances_return_start() {
    let set = CovarianceSet::from_covariances(vec![SymMatrix::zeros(4); 2]).unwrap();
    let res = solve_component(&set, 0.0, 0.5, &LoadingsSet::default(), &AdmmConfig::default()).unwrap();
    assert!(res.converged && res.kept_start);
    assert_eq!(res.objective, 0.0);
}

#[test]
fn scaling_factors() {
    let set = random_set(5, 2, 3);
    let fit = fit_pca(&set, 0.0, 0.5, 2, &AdmmConfig::default()).unwrap();
    assert_eq!(fit.etas, vec![0.0, 0.0]);
    let eig: Vec<_> = set.sigmas.iter().map(|s| sym_eigen(s).unwrap()).collect();
    let mut exact = LoadingsMatrix::zeros(5, 2);
    for (i, e) in eig.iter().enumerate() {
        exact.0.set_column(i, &e.vector(0));
    }
    let g1 = residual_leading_variance(&set, &LoadingsSet::default()).unwrap();
    let g2 = residual_leading_variance(&set, &LoadingsSet { components: vec![exact] }).unwrap();
    assert!((g1 - eig.iter().map(|e| e.values[0]).sum::<f64>()).abs() < 1e-10);
    assert!((g2 - eig.iter().map(|e| e.values[1]).sum::<f64>()).abs() < 1e-10);

    let fit = fit_pca(&set, 0.2, 0.5, 2, &AdmmConfig::default()).unwrap();
    assert_eq!(fit.etas[0], 0.2);
    assert!(fit.etas[1] < 0.2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn solver_invariants(seed in 0u64..10_000, eta in 0.0f64..2.0, gamma in 0.0f64..=1.0) {
        let set = random_set(5, 3, seed);
        let config = AdmmConfig::default();
        let fit = fit_pca(&set, eta, gamma, 2, &config).unwrap();
        let priors = LoadingsSet { components: vec![fit.loadings.components[0].clone()] };
        for (l, res) in fit.results.iter().enumerate() {
            for i in 0..3 {
                if !res.fully_sparse_sources.contains(&i) {
                    prop_assert!((res.loadings.column(i).norm() - 1.0).abs() < 1e-8);
                }
            }
            let prior = if l == 0 { LoadingsSet::default() } else { priors.clone() };
            let start = make_start_or_perturb(&set, gamma, l, &prior, 0).unwrap();
            let start_obj = penalized_objective(&set, &start, fit.etas[l], gamma);
            prop_assert!(res.objective <= start_obj + 1e-6);
        }
        prop_assert!(fit.loadings.orthogonality_error() <= 5e-3 * 5.0);
    }
}

#[test]
fn cpv_stops_at_threshold() {
    let d = [4.0, 3.0, 2.0, 1.0];
    let set = CovarianceSet::from_covariances(vec![SymMatrix::from_diagonal(&d), SymMatrix::from_diagonal(&d)]).unwrap();
    let fit = fit_pca_to_cpv(&set, 0.0, 0.5, 0.65, &AdmmConfig::default()).unwrap();
    assert_eq!(fit.loadings.len(), 2);
    let fit = fit_pca_to_cpv(&set, 0.0, 0.5, 0.75, &AdmmConfig::default()).unwrap();
    assert_eq!(fit.loadings.len(), 3);
    let table = crate::tuning::cpv(&fit.loadings, &set).unwrap();
    assert_eq!(table.select(0.75), Some(3));
    assert!(fit_pca_to_cpv(&set, 0.0, 0.5, 0.0, &AdmmConfig::default()).is_err());
}
