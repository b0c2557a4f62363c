use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{canonical_loadings, scenario1_covariances};
use crate::admm::{fit_pca, penalized_objective, solve_component, solve_component_from, AdmmConfig};
use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, ClassificationMetrics};
use crate::start::{eigen_start, random_start};
use crate::types::{CovarianceSet, LoadingsMatrix, LoadingsSet};

/// Truth of the two-source scenario for component `k` (0-based): column `k`
/// of each base loading matrix.
pub fn scenario1_truth(p: usize, k: usize) -> Result<LoadingsMatrix> {
    let c = canonical_loadings(p)?;
    if k >= p {
        return Err(Error::Index(format!("component {k} with p = {p}")));
    }
    let mut v = LoadingsMatrix::zeros(p, 2);
    v.0.set_column(0, &c.p1.column(k));
    v.0.set_column(1, &c.p2.column(k));
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario1Config {
    pub p: usize,
    pub noise_sd: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub etas: Vec<f64>,
    pub n_components: usize,
    pub admm: AdmmConfig,
}

impl Default for Scenario1Config {
    fn default() -> Self {
        Self {
            p: 10,
            noise_sd: 0.1,
            repetitions: 100,
            seed: 1,
            gammas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            etas: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            n_components: 2,
            admm: AdmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario1Record {
    pub rep: usize,
    pub gamma: f64,
    pub eta: f64,
    /// 0-based component.
    pub component: usize,
    pub converged: bool,
    pub loadings: LoadingsMatrix,
    pub metrics: ClassificationMetrics,
}

/// Fits every `(gamma, eta)` pair on perturbed two-source covariances and
/// scores the sparsity pattern against the true loadings.
pub fn scenario1_study(config: &Scenario1Config) -> Result<Vec<Scenario1Record>> {
    if config.repetitions == 0 || config.gammas.is_empty() || config.etas.is_empty() {
        return Err(Error::InvalidArgument("empty scenario-1 study".into()));
    }
    let truths = (0..config.n_components).map(|k| scenario1_truth(config.p, k)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = config.gammas.iter().flat_map(|g| config.etas.iter().map(move |e| (*g, *e))).collect();
    let per_rep: Vec<Result<Vec<Scenario1Record>>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(rep as u64);
            let s = scenario1_covariances(config.p, config.noise_sd, &mut rng)?;
            let covset = CovarianceSet::from_covariances(s.perturbed.to_vec())?;
            let mut out = Vec::new();
            for (gamma, eta) in &pairs {
                let fit = fit_pca(&covset, *eta, *gamma, config.n_components, &config.admm)?;
                for (k, truth) in truths.iter().enumerate() {
                    out.push(Scenario1Record {
                        rep,
                        gamma: *gamma,
                        eta: *eta,
                        component: k,
                        converged: fit.results[k].converged,
                        metrics: classification_metrics(truth, &fit.loadings.components[k])?,
                        loadings: fit.loadings.components[k].clone(),
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartStudyConfig {
    pub gammas: Vec<f64>,
    pub etas: Vec<f64>,
    pub n_components: usize,
    pub n_random: usize,
    pub seed: u64,
    pub admm: AdmmConfig,
}

impl StartStudyConfig {
    /// `rho = p` with tight tolerances, so that objectives compare optima.
    pub fn for_dimension(p: usize) -> Self {
        Self {
            gammas: vec![0.0, 0.5, 1.0],
            etas: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            n_components: 2,
            n_random: 25,
            seed: 1,
            admm: AdmmConfig { rho_override: Some(p as f64), eps_admm: 1e-6, eps_root: 1e-6, m_max: 20000, ..AdmmConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartStudyPoint {
    pub gamma: f64,
    pub eta: f64,
    /// 0-based component.
    pub component: usize,
    pub proposed: f64,
    pub proposed_converged: bool,
    pub random: Vec<f64>,
    pub random_converged: usize,
    pub median_random: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn alignment(v: &LoadingsMatrix, y0: &LoadingsMatrix) -> f64 {
    (0..v.n_sources()).map(|i| v.0.column(i).dot(&y0.0.column(i)).abs()).sum()
}

/// Compares the objective reached from the proposed start with that of
/// random starts. Later components use the best solution over all starts as
/// prior; near-ties prefer the solution most aligned with the eigenvector
/// start.
pub fn starting_value_study(covset: &CovarianceSet, config: &StartStudyConfig) -> Result<Vec<StartStudyPoint>> {
    if config.n_random == 0 || config.n_components == 0 || config.n_components > covset.p() {
        return Err(Error::InvalidArgument("bad start study configuration".into()));
    }
    let pairs: Vec<(usize, f64, usize, f64)> = config
        .gammas
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| config.etas.iter().enumerate().map(move |(ei, e)| (gi, *g, ei, *e)))
        .collect();
    let per_pair: Vec<Result<Vec<StartStudyPoint>>> = pairs
        .par_iter()
        .map(|&(gi, gamma, ei, eta)| {
            let mut priors = LoadingsSet::default();
            let mut out = Vec::with_capacity(config.n_components);
            for k in 0..config.n_components {
                let y0 = eigen_start(covset, k)?;
                let prop = solve_component(covset, eta, gamma, &priors, &config.admm)?;
                let proposed = penalized_objective(covset, &prop.loadings, eta, gamma);
                let mut best = (proposed, alignment(&prop.loadings, &y0), prop.loadings.clone());
                let mut random = Vec::with_capacity(config.n_random);
                let mut random_converged = 0;
                for r in 0..config.n_random {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    let stream = (((gi * config.etas.len() + ei) * config.n_components + k) * config.n_random + r) as u64;
                    rng.set_stream(stream);
                    let start = random_start(covset.p(), covset.n_sources(), &priors, &mut rng)?;
                    let res = solve_component_from(covset, eta, gamma, &priors, &start, &config.admm)?;
                    let obj = penalized_objective(covset, &res.loadings, eta, gamma);
                    random_converged += usize::from(res.converged);
                    random.push(obj);
                    let tol = 1e-6 * best.0.abs().max(1.0);
                    let align = alignment(&res.loadings, &y0);
                    if obj < best.0 - tol || (obj <= best.0 + tol && align > best.1) {
                        best = (obj.min(best.0), align, res.loadings);
                    }
                }
                out.push(StartStudyPoint {
                    gamma,
                    eta,
                    component: k,
                    proposed,
                    proposed_converged: prop.converged,
                    median_random: median(&random),
                    random,
                    random_converged,
                });
                priors.components.push(best.2);
            }
            Ok(out)
        })
        .collect();
    let mut points = Vec::new();
    for r in per_pair {
        points.extend(r?);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_zero_pattern() {
        let t = scenario1_truth(10, 0).unwrap();
        let zeros = |i: usize| (0..10).filter(|j| t.0[(*j, i)] == 0.0).collect::<Vec<_>>();
        assert_eq!(zeros(0), vec![2, 3, 5, 6, 7, 8, 9]);
        assert_eq!(zeros(1), vec![2, 3, 4, 5, 6, 7, 8, 9]);
        assert!(scenario1_truth(10, 10).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn scenario1_study_shape() {
        let cfg = Scenario1Config { repetitions: 2, gammas: vec![0.5], etas: vec![0.0, 1.0], ..Default::default() };
        let recs = scenario1_study(&cfg).unwrap();
        assert_eq!(recs.len(), 2 * 2 * 2);
        for r in &recs {
            assert!(r.loadings.unit_norm_error() < 1e-8);
        }
        let again = scenario1_study(&cfg).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn start_study_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = scenario1_covariances(10, 0.1, &mut rng).unwrap();
        let covset = CovarianceSet::from_covariances(s.perturbed.to_vec()).unwrap();
        let cfg = StartStudyConfig { gammas: vec![0.5], etas: vec![0.5], n_random: 3, ..StartStudyConfig::for_dimension(10) };
        let pts = starting_value_study(&covset, &cfg).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].component, 1);
        assert_eq!(pts[0].random.len(), 3);
    }
}
