use mspca_core::admm::{fit_pca, AdmmConfig};
use mspca_core::metrics::subspace_angle;
use mspca_core::numerics::sym_eigen;
use mspca_core::ssmrcd::{band_weights, fit, SsmrcdConfig};
use mspca_core::tuning::cpv;
use mspca_core::{CovarianceSet, MultiSourceData, SymMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_blocks(seed: u64, n_sources: usize, n: usize, p: usize) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sources)
        .map(|_| DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng)))
        .collect()
}

fn random_covset(seed: u64, n_sources: usize, p: usize) -> CovarianceSet {
    let sigmas = gaussian_blocks(seed, n_sources, p + 3, p)
        .into_iter()
        .map(|x| SymMatrix::symmetrize(x.transpose() * x / (p + 3) as f64))
        .collect();
    CovarianceSet::from_covariances(sigmas).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ssmrcd_outputs_are_positive_definite(seed in 0u64..1000, lambda in 0.0f64..=1.0, alpha in 0.5f64..=1.0) {
        let data = MultiSourceData::from_blocks(&gaussian_blocks(seed, 3, 25, 4)).unwrap();
        let mut cfg = SsmrcdConfig::new(alpha, lambda, band_weights(3, 1).unwrap());
        cfg.seed = seed;
        let out = fit(&data, &cfg).unwrap();
        for s in &out.covset.sigmas {
            prop_assert!(sym_eigen(s).unwrap().min_value() > 0.0);
        }
        for (i, h) in out.subsets.0.iter().enumerate() {
            let members = data.members(i).unwrap();
            prop_assert!(h.iter().all(|r| members.contains(r)));
        }
        prop_assert!(out.trace.windows(2).all(|t| t[1] <= t[0] + 1e-10));
    }

    #[test]
    fn explained_share_is_cumulative(seed in 0u64..1000, eta in 0.0f64..1.0, gamma in 0.0f64..=1.0) {
        let covset = random_covset(seed, 2, 5);
        let pca = fit_pca(&covset, eta, gamma, 3, &AdmmConfig::default()).unwrap();
        let table = cpv(&pca.loadings, &covset).unwrap();
        prop_assert!(table.per_component.iter().all(|c| *c >= -1e-12));
        prop_assert!(table.cumulative.windows(2).all(|c| c[1] >= c[0] - 1e-12));
        prop_assert!(*table.cumulative.last().unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn angle_ignores_basis_choice(seed in 0u64..1000, theta in 0.0f64..std::f64::consts::TAU) {
        let b = gaussian_blocks(seed, 1, 6, 2).remove(0).qr().q();
        let (c, s) = (theta.cos(), theta.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let rotated = &b * rot;
        prop_assert!(subspace_angle(&b, &rotated).unwrap() < 1e-6);
        let other = gaussian_blocks(seed + 1, 1, 6, 2).remove(0).qr().q();
        let ab = subspace_angle(&b, &other).unwrap();
        let rb = subspace_angle(&rotated, &other).unwrap();
        prop_assert!((ab - rb).abs() < 1e-8);
        prop_assert!((ab - subspace_angle(&other, &b).unwrap()).abs() < 1e-8);
    }
}
