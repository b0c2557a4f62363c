//! Selection of the sparsity mix `gamma`, the penalty `eta` and the number of
//! components. Tuning looks at the first component only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{solve_component, AdmmConfig};
use crate::error::{Error, Result};
use crate::start::extreme_pair;
use crate::types::{CovarianceSet, LoadingsMatrix, LoadingsSet};

/// One solved point on a tuning path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub eta: f64,
    pub gamma: f64,
    pub sparsity_s: f64,
    pub scaled_var: f64,
    pub entrywise_sparsity: f64,
    pub tpo: f64,
    pub converged: bool,
    pub loadings: LoadingsMatrix,
}

fn zero_count(v: &LoadingsMatrix) -> usize {
    v.0.iter().filter(|x| **x == 0.0).count()
}

/// Fraction `#{v_ji = 0} / (N (p - 1))`.
pub fn entrywise_sparsity(v: &LoadingsMatrix) -> f64 {
    let denom = (v.n_sources() * (v.p().saturating_sub(1))) as f64;
    if denom == 0.0 {
        return 0.0;
    }
    (zero_count(v) as f64 / denom).min(1.0)
}

/// Mean of entrywise and rowwise sparsity, each scaled to reach one at the
/// sparsest feasible loadings.
pub fn sparsity_measure(v: &LoadingsMatrix) -> f64 {
    let p1 = v.p().saturating_sub(1) as f64;
    if p1 == 0.0 {
        return 0.0;
    }
    let zero_rows = v.0.row_iter().filter(|r| r.iter().all(|x| *x == 0.0)).count() as f64;
    0.5 * (entrywise_sparsity(v) + (zero_rows / p1).min(1.0))
}

/// Explained variance of `v` rescaled so the sparse extreme maps to 0 and the
/// unpenalized solution to 1.
pub fn scaled_variance(v: &LoadingsMatrix, covset: &CovarianceSet, y0: &LoadingsMatrix, yinf: &LoadingsMatrix) -> Result<f64> {
    let top = covset.explained_variance(y0);
    let bottom = covset.explained_variance(yinf);
    let denom = top - bottom;
    if !(denom.abs() > 1e-12 * top.abs().max(1.0)) {
        return Err(Error::DegenerateScaling);
    }
    Ok((covset.explained_variance(v) - bottom) / denom)
}

fn check_grid(name: &str, grid: &[f64], lo: f64, hi: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if let Some(x) = grid.iter().find(|x| !(**x >= lo && **x <= hi)) {
        return Err(Error::InvalidArgument(format!("{name} grid value {x} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn solve_point(covset: &CovarianceSet, gamma: f64, eta: f64, config: &AdmmConfig, y0: &LoadingsMatrix, yinf: &LoadingsMatrix) -> Result<PathPoint> {
    let res = solve_component(covset, eta, gamma, &LoadingsSet::default(), config)?;
    let scaled_var = scaled_variance(&res.loadings, covset, y0, yinf)?;
    let entrywise = entrywise_sparsity(&res.loadings);
    Ok(PathPoint {
        eta,
        gamma,
        sparsity_s: sparsity_measure(&res.loadings),
        scaled_var,
        entrywise_sparsity: entrywise,
        tpo: entrywise * scaled_var,
        converged: res.converged,
        loadings: res.loadings,
    })
}

/// First-component path over increasing `eta`, ending at the first fully
/// sparse point.
pub fn eta_path(covset: &CovarianceSet, gamma: f64, eta_grid: &[f64], config: &AdmmConfig) -> Result<Vec<PathPoint>> {
    let pair = extreme_pair(covset, gamma, 0)?;
    let mut etas = eta_grid.to_vec();
    etas.sort_by(f64::total_cmp);
    let mut path = Vec::with_capacity(etas.len());
    for eta in etas {
        let point = solve_point(covset, gamma, eta, config, &pair.y0, &pair.yinf)?;
        let full = point.entrywise_sparsity >= 1.0;
        path.push(point);
        if full {
            break;
        }
    }
    Ok(path)
}

/// Trapezoid area under scaled variance (clipped to [0, 1]) over the
/// sparsity axis.
pub fn auc(path: &[PathPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = path.iter().map(|p| (p.sparsity_s, p.scaled_var.clamp(0.0, 1.0))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSelection {
    pub gamma: f64,
    /// `(gamma, auc)` per grid value.
    pub aucs: Vec<(f64, f64)>,
    pub path: Vec<PathPoint>,
}

/// `gamma` maximizing the AUC; ties go to the larger `gamma`.
pub fn tune_gamma(covset: &CovarianceSet, gamma_grid: &[f64], eta_grid: &[f64], config: &AdmmConfig) -> Result<GammaSelection> {
    check_grid("gamma", gamma_grid, 0.0, 1.0)?;
    check_grid("eta", eta_grid, 0.0, f64::INFINITY)?;
    let mut gammas = gamma_grid.to_vec();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let paths: Vec<Result<Vec<PathPoint>>> = gammas.par_iter().map(|g| eta_path(covset, *g, eta_grid, config)).collect();
    let mut aucs = Vec::with_capacity(gammas.len());
    let mut path = Vec::new();
    let mut best = (f64::NEG_INFINITY, gammas[0]);
    for (g, p) in gammas.iter().zip(paths) {
        let p = p?;
        let a = auc(&p);
        if a >= best.0 {
            best = (a, *g);
        }
        aucs.push((*g, a));
        path.extend(p);
    }
    Ok(GammaSelection { gamma: best.1, aucs, path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSelection {
    pub eta: f64,
    pub path: Vec<PathPoint>,
}

/// `eta` maximizing the trade-off product; ties go to the smaller `eta`.
pub fn tune_eta(covset: &CovarianceSet, gamma: f64, eta_grid: &[f64], config: &AdmmConfig) -> Result<EtaSelection> {
    check_grid("eta", eta_grid, 0.0, f64::INFINITY)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let pair = extreme_pair(covset, gamma, 0)?;
    let mut etas = eta_grid.to_vec();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let path = etas
        .par_iter()
        .map(|e| solve_point(covset, gamma, *e, config, &pair.y0, &pair.yinf))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (f64::NEG_INFINITY, etas[0]);
    for p in &path {
        if p.tpo > best.0 {
            best = (p.tpo, p.eta);
        }
    }
    Ok(EtaSelection { eta: best.1, path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpvTable {
    /// Cumulative share of the total trace after each component.
    pub cumulative: Vec<f64>,
    /// Share of the total trace per component.
    pub per_component: Vec<f64>,
    /// `per_source[i][l]`: share of `tr S_i` explained by component `l` in source `i`.
    pub per_source: Vec<Vec<f64>>,
}

impl CpvTable {
    /// Smallest number of components reaching `threshold`.
    pub fn select(&self, threshold: f64) -> Option<usize> {
        self.cumulative.iter().position(|c| *c >= threshold).map(|k| k + 1)
    }
}

pub fn cpv(loadings: &LoadingsSet, covset: &CovarianceSet) -> Result<CpvTable> {
    let total = covset.total_trace();
    if !(total > 0.0) {
        return Err(Error::InvalidMatrix("total variance is zero".into()));
    }
    let mut cumulative = Vec::with_capacity(loadings.len());
    let mut per_component = Vec::with_capacity(loadings.len());
    let mut per_source = vec![Vec::with_capacity(loadings.len()); covset.n_sources()];
    let mut acc = 0.0;
    for v in &loadings.components {
        if v.p() != covset.p() || v.n_sources() != covset.n_sources() {
            return Err(Error::Dimension("loadings do not match the covariance set".into()));
        }
        let by_source = covset.explained_by_source(v);
        let share = by_source.iter().sum::<f64>() / total;
        acc += share;
        per_component.push(share);
        cumulative.push(acc);
        for (i, e) in by_source.iter().enumerate() {
            let tr = covset.sigmas[i].trace();
            per_source[i].push(if tr > 0.0 { e / tr } else { 0.0 });
        }
    }
    Ok(CpvTable { cumulative, per_component, per_source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SymMatrix;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn point(s: f64, v: f64) -> PathPoint {
        PathPoint {
            eta: 0.0,
            gamma: 0.0,
            sparsity_s: s,
            scaled_var: v,
            entrywise_sparsity: 0.0,
            tpo: 0.0,
            converged: true,
            loadings: LoadingsMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn sparsity_measure_cases() {
        let dense = LoadingsMatrix(DMatrix::from_element(10, 2, 0.3));
        assert_eq!(sparsity_measure(&dense), 0.0);
        let mut hot = LoadingsMatrix::zeros(10, 2);
        hot.0.row_mut(3).fill(1.0);
        assert_eq!(sparsity_measure(&hot), 1.0);
        // p = 11, N = 2, rows 0..5 zero: 10 zeros over 20, 5 rows over 10
        let mut half = LoadingsMatrix(DMatrix::from_element(11, 2, 0.3));
        for j in 0..5 {
            half.0.row_mut(j).fill(0.0);
        }
        assert!((sparsity_measure(&half) - 0.5 * (10.0 / 20.0 + 5.0 / 10.0)).abs() < 1e-15);
        // per-source one-hot on different rows: entrywise 1, rowwise 8/9
        let mut local = LoadingsMatrix::zeros(10, 2);
        local.0[(0, 0)] = 1.0;
        local.0[(1, 1)] = 1.0;
        assert!((sparsity_measure(&local) - 0.5 * (1.0 + 8.0 / 9.0)).abs() < 1e-15);
        assert_eq!(entrywise_sparsity(&local), 1.0);
    }

    proptest! {
        #[test]
        fn sparsity_in_unit_interval(mask in proptest::collection::vec(any::<bool>(), 12)) {
            let m = DMatrix::from_fn(4, 3, |j, i| if mask[j * 3 + i] { 0.0 } else { 1.0 });
            let s = sparsity_measure(&LoadingsMatrix(m));
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn auc_ignores_duplicates(pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8), dup in 0usize..8) {
            let path: Vec<PathPoint> = pts.iter().map(|(s, v)| point(*s, *v)).collect();
            let mut doubled = path.clone();
            doubled.push(path[dup % path.len()].clone());
            prop_assert!((auc(&path) - auc(&doubled)).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_trapezoid() {
        let path = vec![point(0.0, 1.0), point(1.0, 0.0), point(0.5, 0.5)];
        assert!((auc(&path) - 0.5).abs() < 1e-15);
        assert!((auc(&[point(0.0, 2.0), point(1.0, 2.0)]) - 1.0).abs() < 1e-15);
    }

    fn two_sources() -> CovarianceSet {
        let a = SymMatrix::new(DMatrix::from_row_slice(4, 4, &[
            4.0, 1.0, 0.5, 0.0, 1.0, 3.0, 0.3, 0.1, 0.5, 0.3, 2.0, 0.2, 0.0, 0.1, 0.2, 1.0,
        ]))
        .unwrap();
        let b = SymMatrix::new(DMatrix::from_row_slice(4, 4, &[
            3.5, 0.8, 0.4, 0.1, 0.8, 3.2, 0.2, 0.0, 0.4, 0.2, 1.5, 0.3, 0.1, 0.0, 0.3, 1.2,
        ]))
        .unwrap();
        CovarianceSet::from_covariances(vec![a, b]).unwrap()
    }

    #[test]
    fn scaled_variance_endpoints() {
        let set = two_sources();
        let pair = extreme_pair(&set, 0.5, 0).unwrap();
        assert!((scaled_variance(&pair.y0, &set, &pair.y0, &pair.yinf).unwrap() - 1.0).abs() < 1e-12);
        assert!(scaled_variance(&pair.yinf, &set, &pair.y0, &pair.yinf).unwrap().abs() < 1e-12);
        let ident = CovarianceSet::from_covariances(vec![SymMatrix::identity(3); 2]).unwrap();
        let y = LoadingsMatrix(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert!(matches!(scaled_variance(&y, &ident, &y, &y), Err(Error::DegenerateScaling)));
    }

    #[test]
    fn single_gamma_grid() {
        let set = two_sources();
        let sel = tune_gamma(&set, &[0.3], &[0.0, 0.5, 1.0], &AdmmConfig::default()).unwrap();
        assert_eq!(sel.gamma, 0.3);
        assert!(sel.path.iter().all(|p| p.gamma == 0.3));
    }

    #[test]
    fn eta_path_endpoints() {
        let set = two_sources();
        let sel = tune_eta(&set, 0.5, &[0.0, 0.5, 1.0, 50.0], &AdmmConfig::default()).unwrap();
        let first = &sel.path[0];
        assert_eq!(first.entrywise_sparsity, 0.0);
        assert_eq!(first.tpo, 0.0);
        let last = sel.path.last().unwrap();
        assert_eq!(last.sparsity_s, 1.0);
        assert!(last.tpo.abs() < 1e-12);
        for p in &sel.path {
            assert!(p.scaled_var <= 1.0 + 1e-8);
            assert_eq!(p.loadings, solve_component(&set, p.eta, 0.5, &LoadingsSet::default(), &AdmmConfig::default()).unwrap().loadings);
        }
    }

    #[test]
    fn path_stops_at_full_sparsity() {
        let set = two_sources();
        let path = eta_path(&set, 1.0, &[100.0, 0.0, 200.0], &AdmmConfig::default()).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path[1].entrywise_sparsity, 1.0);
    }

    #[test]
    fn cpv_cases() {
        let ident = CovarianceSet::from_covariances(vec![SymMatrix::identity(4); 2]).unwrap();
        let mut set = LoadingsSet::default();
        for k in 0..4 {
            let mut v = LoadingsMatrix::zeros(4, 2);
            v.0.row_mut(k).fill(1.0);
            set.components.push(v);
        }
        let table = cpv(&set, &ident).unwrap();
        for (k, c) in table.cumulative.iter().enumerate() {
            assert!((c - (k + 1) as f64 / 4.0).abs() < 1e-15);
        }
        assert_eq!(table.select(0.8), Some(4));
        assert_eq!(table.select(0.5), Some(2));
        assert_eq!(table.per_source[1], vec![0.25; 4]);
        assert!(table.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }
}
