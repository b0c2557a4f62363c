//! Spatially smoothed minimum regularized covariance determinant estimator.
//!
//! Each source keeps an `h_i`-subset of its least outlying rows. The subset
//! scatters are regularized towards a target and then smoothed across sources
//! with a row-stochastic weight matrix. Subsets are chosen jointly to minimize
//! the sum of determinants of the smoothed matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chi2_cdf, chi2_quantile, inv_sqrt_psd, sym_eigen, SymMatrix, DEFAULT_PSD_FLOOR};
use crate::types::{CovarianceMeta, CovarianceSet, MultiSourceData};

const RHO_GRID_STEPS: usize = 20;

/// How the per-source regularization weight `rho_i` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RhoRule {
    /// Smallest value on `{0, 0.05, ..., 1}` giving a PSD scatter with
    /// condition number at most `cond_max`.
    Auto { cond_max: f64 },
    Fixed(f64),
}

impl Default for RhoRule {
    fn default() -> Self {
        RhoRule::Auto { cond_max: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmrcdConfig {
    /// Subset fraction in `[0.5, 1]`.
    pub alpha: f64,
    /// Smoothing weight in `[0, 1]`.
    pub lambda: f64,
    /// `N x N` weights, zero diagonal, rows summing to one.
    pub weights: DMatrix<f64>,
    /// Regularization target; identity when `None`.
    pub target: Option<SymMatrix>,
    /// Full-scatter start, spatial-sign and rank-correlation starts, then
    /// random subsets.
    pub n_starts: usize,
    pub max_csteps: usize,
    pub rho: RhoRule,
    pub seed: u64,
}

impl SsmrcdConfig {
    pub fn new(alpha: f64, lambda: f64, weights: DMatrix<f64>) -> Self {
        Self {
            alpha,
            lambda,
            weights,
            target: None,
            n_starts: 5,
            max_csteps: 50,
            rho: RhoRule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, n_sources: usize) -> Result<()> {
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0.5, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.n_starts == 0 || self.max_csteps == 0 {
            return Err(Error::InvalidArgument("n_starts and max_csteps must be positive".into()));
        }
        if let RhoRule::Fixed(r) = self.rho {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("rho {r} outside [0, 1]")));
            }
        }
        validate_weights(&self.weights, n_sources)
    }
}

/// Checks the weight matrix: `N x N`, zero diagonal, nonnegative, rows summing to one.
pub fn validate_weights(w: &DMatrix<f64>, n_sources: usize) -> Result<()> {
    if w.nrows() != n_sources || w.ncols() != n_sources {
        return Err(Error::Dimension(format!(
            "weight matrix is {}x{}, expected {n_sources}x{n_sources}",
            w.nrows(),
            w.ncols()
        )));
    }
    for i in 0..n_sources {
        if w[(i, i)] != 0.0 {
            return Err(Error::InvalidArgument(format!("weight diagonal {i} is nonzero")));
        }
        let row = w.row(i);
        if row.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight row {i} has negative entries")));
        }
        // a single source has nothing to smooth with
        if n_sources > 1 && (row.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("weight row {i} sums to {}", row.sum())));
        }
    }
    Ok(())
}

/// Per-source subsets of global row indices, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSubsets(pub Vec<Vec<usize>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmrcdFit {
    pub covset: CovarianceSet,
    pub subsets: HSubsets,
    /// Log of the summed determinants of the smoothed covariances.
    pub objective: f64,
    pub rho: Vec<f64>,
    pub c_alpha: f64,
    /// Objective after every accepted concentration step of the winning start.
    pub trace: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
}

/// Consistency factor making the `alpha`-trimmed covariance of a normal
/// sample consistent.
pub fn consistency_factor(alpha: f64, p: usize) -> Result<f64> {
    if !(0.5..=1.0).contains(&alpha) || p == 0 {
        return Err(Error::InvalidArgument(format!("alpha {alpha}, p {p}")));
    }
    if alpha >= 1.0 {
        return Ok(1.0);
    }
    let q = chi2_quantile(alpha, p as u32)?;
    Ok(alpha / chi2_cdf(q, p as u32 + 2))
}

fn mean_of(rows: &DMatrix<f64>) -> DVector<f64> {
    rows.row_mean().transpose()
}

fn sample_covariance(rows: &DMatrix<f64>) -> Result<SymMatrix> {
    let h = rows.nrows();
    if h < 2 {
        return Err(Error::InsufficientData(format!("{h} rows, need at least 2")));
    }
    let mu = mean_of(rows);
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= mu.transpose();
    }
    Ok(SymMatrix::symmetrize(centered.transpose() * &centered / (h as f64 - 1.0)))
}

/// `rho T + (1 - rho) c_alpha Cov(Xsub)` with the unbiased sample covariance.
pub fn regularized_scatter(xsub: &DMatrix<f64>, target: &SymMatrix, rho: f64, c_alpha: f64) -> Result<SymMatrix> {
    let cov = sample_covariance(xsub)?;
    Ok(blend(&cov, target, rho, c_alpha))
}

fn blend(cov: &SymMatrix, target: &SymMatrix, rho: f64, c_alpha: f64) -> SymMatrix {
    SymMatrix::symmetrize(target.as_matrix() * rho + cov.as_matrix() * ((1.0 - rho) * c_alpha))
}

/// `(1 - lambda) K_i + lambda Σ_{j≠i} w_ij K_j` for every source.
pub fn smooth_covariances(ks: &[SymMatrix], lambda: f64, w: &DMatrix<f64>) -> Vec<SymMatrix> {
    let n = ks.len();
    (0..n)
        .map(|i| {
            let terms = std::iter::once((1.0 - lambda, &ks[i]))
                .chain((0..n).filter(|&j| j != i).map(|j| (lambda * w[(i, j)], &ks[j])));
            SymMatrix::weighted_sum(terms).expect("at least one source")
        })
        .collect()
}

fn select_rho(cov: &SymMatrix, target: &SymMatrix, c_alpha: f64, cond_max: f64) -> Result<f64> {
    for k in 0..=RHO_GRID_STEPS {
        let rho = k as f64 / RHO_GRID_STEPS as f64;
        let eig = sym_eigen(&blend(cov, target, rho, c_alpha))?;
        let (max, min) = (eig.values[0], eig.min_value());
        if min > 0.0 && max / min <= cond_max {
            return Ok(rho);
        }
    }
    Ok(1.0)
}

// Positive-definite helper: inverse and log-determinant from one eigendecomposition.
struct Factor {
    inverse: DMatrix<f64>,
    log_det: f64,
}

fn factor(s: &SymMatrix) -> Result<Factor> {
    let eig = sym_eigen(s)?;
    let floor = f64::MIN_POSITIVE;
    let log_det = eig.values.iter().map(|l| l.max(floor).ln()).sum();
    let inv = eig.values.map(|l| 1.0 / l.max(DEFAULT_PSD_FLOOR));
    let inverse = &eig.vectors * DMatrix::from_diagonal(&inv) * eig.vectors.transpose();
    Ok(Factor { inverse, log_det })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Problem<'a> {
    data: &'a MultiSourceData,
    target: SymMatrix,
    lambda: f64,
    weights: &'a DMatrix<f64>,
    c_alpha: f64,
    rho: Vec<f64>,
    h: Vec<usize>,
}

struct State {
    subsets: Vec<Vec<usize>>,
    sigmas: Vec<SymMatrix>,
    factors: Vec<Factor>,
    objective: f64,
}

impl Problem<'_> {
    fn evaluate(&self, subsets: Vec<Vec<usize>>) -> Result<State> {
        let ks = subsets
            .iter()
            .enumerate()
            .map(|(i, idx)| regularized_scatter(&self.data.x().select_rows(idx), &self.target, self.rho[i], self.c_alpha))
            .collect::<Result<Vec<_>>>()?;
        let sigmas = smooth_covariances(&ks, self.lambda, self.weights);
        let factors = sigmas.iter().map(factor).collect::<Result<Vec<_>>>()?;
        let lds: Vec<f64> = factors.iter().map(|f| f.log_det).collect();
        Ok(State { subsets, sigmas, factors, objective: log_sum_exp(&lds) })
    }

    // The h_i rows of each source closest to its subset mean in the metric of
    // the current smoothed covariance.
    fn concentrate(&self, state: &State) -> Result<Vec<Vec<usize>>> {
        let x = self.data.x();
        let mut next = Vec::with_capacity(state.subsets.len());
        for (i, idx) in state.subsets.iter().enumerate() {
            let mu = mean_of(&x.select_rows(idx));
            let members = self.data.members(i)?;
            let d = mahalanobis(x, members, &mu, &state.factors[i].inverse);
            next.push(smallest(members, &d, self.h[i]));
        }
        Ok(next)
    }

    fn run_start(&self, initial: Vec<Vec<usize>>, max_csteps: usize) -> Result<(State, Vec<f64>)> {
        let mut state = self.evaluate(initial)?;
        let mut trace = vec![state.objective];
        for _ in 0..max_csteps {
            let next = self.concentrate(&state)?;
            if next == state.subsets {
                break;
            }
            let cand = self.evaluate(next.clone())?;
            if cand.objective <= state.objective {
                state = cand;
                trace.push(state.objective);
                continue;
            }
            // The joint step got worse through the smoothing coupling; try the
            // sources one at a time instead.
            let mut moved = false;
            for (i, sub) in next.into_iter().enumerate() {
                if sub == state.subsets[i] {
                    continue;
                }
                let mut subsets = state.subsets.clone();
                subsets[i] = sub;
                let cand = self.evaluate(subsets)?;
                if cand.objective < state.objective {
                    state = cand;
                    trace.push(state.objective);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        Ok((state, trace))
    }
}

fn mahalanobis(x: &DMatrix<f64>, rows: &[usize], mu: &DVector<f64>, inv: &DMatrix<f64>) -> Vec<f64> {
    rows.iter()
        .map(|&r| {
            let d = x.row(r).transpose() - mu;
            d.dot(&(inv * &d))
        })
        .collect()
}

// Members with the h smallest distances, returned in ascending index order.
fn smallest(members: &[usize], d: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order[..h].iter().map(|&k| members[k]).collect();
    chosen.sort_unstable();
    chosen
}

// Members sorted by row content, so random starts pick the same observations
// whatever the row order of the input.
fn canonical_order(x: &DMatrix<f64>, members: &[usize]) -> Vec<usize> {
    let mut m = members.to_vec();
    m.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    m
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

// Median absolute deviation about the median; 1 when degenerate.
fn mad_scale(v: &[f64]) -> (f64, f64) {
    let med = median(v.to_vec());
    let mad = median(v.iter().map(|x| (x - med).abs()).collect());
    (med, if mad > 0.0 { mad } else { 1.0 })
}

fn coordinatewise_median(rows: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(rows.ncols(), rows.column_iter().map(|c| median(c.iter().cloned().collect())))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && v[order[end + 1]] == v[order[k]] {
            end += 1;
        }
        let avg = (k + end) as f64 / 2.0 + 1.0;
        for &o in &order[k..=end] {
            r[o] = avg;
        }
        k = end + 1;
    }
    r
}

#[derive(Debug, Clone, Copy)]
enum RobustShape {
    SpatialSign,
    Spearman,
}

// Rows closest to the center in a robustly rescaled eigenbasis of a robust
// shape estimate, computed on median/MAD standardized data.
fn robust_start(x: &DMatrix<f64>, members: &[usize], h: usize, shape: RobustShape) -> Result<Vec<usize>> {
    let rows = x.select_rows(members);
    let (n, p) = rows.shape();
    let mut z = rows.clone();
    for mut col in z.column_iter_mut() {
        let (med, scale) = mad_scale(col.as_slice());
        col.iter_mut().for_each(|v| *v = (*v - med) / scale);
    }
    let s = match shape {
        RobustShape::SpatialSign => {
            let mut m = DMatrix::zeros(p, p);
            for r in z.row_iter() {
                let nn = r.norm_squared();
                if nn > 0.0 {
                    m += r.transpose() * r / nn;
                }
            }
            m / n as f64
        }
        RobustShape::Spearman => {
            let mut rk = DMatrix::from_fn(n, p, |_, _| 0.0);
            for j in 0..p {
                let r = ranks(z.column(j).as_slice());
                rk.set_column(j, &DVector::from_vec(r));
            }
            sample_covariance(&rk)?.into_matrix()
        }
    };
    let basis = sym_eigen(&SymMatrix::symmetrize(s))?.vectors;
    let scores = &z * &basis;
    let scales: Vec<(f64, f64)> = scores.column_iter().map(|c| mad_scale(c.as_slice())).collect();
    let d: Vec<f64> = (0..n)
        .map(|r| scales.iter().enumerate().map(|(k, (med, sc))| ((scores[(r, k)] - med) / sc).powi(2)).sum())
        .collect();
    Ok(smallest(members, &d, h))
}

fn subset_size(alpha: f64, n_i: usize) -> usize {
    ((alpha * n_i as f64 - 1e-9).ceil() as usize).clamp(2, n_i)
}

/// Joint subset search over several starts followed by concentration steps
/// with monotone acceptance. Deterministic for a fixed seed.
pub fn fit(data: &MultiSourceData, config: &SsmrcdConfig) -> Result<SsmrcdFit> {
    let n_sources = data.n_sources();
    config.validate(n_sources)?;
    let p = data.p();
    let target = config.target.clone().unwrap_or_else(|| SymMatrix::identity(p));
    if target.dim() != p {
        return Err(Error::Dimension(format!("target is {0}x{0}, data has {p} columns", target.dim())));
    }
    let c_alpha = consistency_factor(config.alpha, p)?;
    let x = data.x();

    let mut h = Vec::with_capacity(n_sources);
    let mut det_start = Vec::with_capacity(n_sources);
    let mut rho = Vec::with_capacity(n_sources);
    for i in 0..n_sources {
        let members = data.members(i)?;
        let h_i = subset_size(config.alpha, members.len());
        let rows = x.select_rows(members);
        let full_cov = sample_covariance(&rows)?;
        let full_rho = match config.rho {
            RhoRule::Auto { cond_max } => select_rho(&full_cov, &target, 1.0, cond_max)?,
            RhoRule::Fixed(r) => r,
        };
        let scatter = factor(&blend(&full_cov, &target, full_rho, 1.0))?;
        let center = coordinatewise_median(&rows);
        let d = mahalanobis(x, members, &center, &scatter.inverse);
        let initial = smallest(members, &d, h_i);
        let rho_i = match config.rho {
            RhoRule::Auto { cond_max } => {
                select_rho(&sample_covariance(&x.select_rows(&initial))?, &target, c_alpha, cond_max)?
            }
            RhoRule::Fixed(r) => r,
        };
        h.push(h_i);
        det_start.push(initial);
        rho.push(rho_i);
    }

    let problem = Problem { data, target, lambda: config.lambda, weights: &config.weights, c_alpha, rho, h };

    let starts = (0..config.n_starts)
        .map(|s| match s {
            0 => Ok(det_start.clone()),
            1 | 2 => {
                let shape = if s == 1 { RobustShape::SpatialSign } else { RobustShape::Spearman };
                (0..n_sources).map(|i| robust_start(x, data.members(i)?, problem.h[i], shape)).collect()
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(s as u64);
                (0..n_sources)
                    .map(|i| {
                        let members = canonical_order(x, data.members(i)?);
                        let mut pick: Vec<usize> =
                            sample(&mut rng, members.len(), problem.h[i]).into_iter().map(|k| members[k]).collect();
                        pick.sort_unstable();
                        Ok(pick)
                    })
                    .collect()
            }
        })
        .collect::<Result<Vec<Vec<Vec<usize>>>>>()?;

    let results: Vec<(State, Vec<f64>)> = starts
        .into_par_iter()
        .map(|init| problem.run_start(init, config.max_csteps))
        .collect::<Result<Vec<_>>>()?;

    let (best, trace) = results
        .into_iter()
        .reduce(|a, b| if b.0.objective < a.0.objective { b } else { a })
        .expect("at least one start");

    let mus = best.subsets.iter().map(|idx| mean_of(&x.select_rows(idx))).collect();
    let covset = CovarianceSet {
        sigmas: best.sigmas,
        mus,
        meta: CovarianceMeta { lambda: config.lambda, subset_sizes: problem.h.clone(), rho: problem.rho.clone() },
    };
    Ok(SsmrcdFit {
        covset,
        subsets: HSubsets(best.subsets),
        objective: best.objective,
        rho: problem.rho,
        c_alpha,
        trace,
        alpha: config.alpha,
        lambda: config.lambda,
    })
}

/// Mean of the `ceil(alpha n)` smallest whitened residual norms
/// `||Σ_a^{-1/2} (x - μ_a)||`.
pub fn residual_criterion(data: &MultiSourceData, covset: &CovarianceSet, alpha: f64) -> Result<f64> {
    if covset.n_sources() != data.n_sources() || covset.p() != data.p() {
        return Err(Error::Dimension("covariance set does not match data".into()));
    }
    let roots = covset
        .sigmas
        .iter()
        .map(|s| inv_sqrt_psd(s, DEFAULT_PSD_FLOOR))
        .collect::<Result<Vec<_>>>()?;
    let x = data.x();
    let mut norms: Vec<f64> = (0..data.n())
        .map(|r| {
            let a = data.source_of(r);
            let d = x.row(r).transpose() - &covset.mus[a];
            (roots[a].as_matrix() * d).norm()
        })
        .collect();
    norms.sort_by(f64::total_cmp);
    let h = ((alpha * norms.len() as f64 - 1e-9).ceil() as usize).clamp(1, norms.len());
    Ok(norms[..h].iter().sum::<f64>() / h as f64)
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// `(lambda, R)` for every grid value, in grid order.
    pub trace: Vec<(f64, f64)>,
    pub fit: SsmrcdFit,
}

/// Fits the estimator for each smoothing value and keeps the one with the
/// smallest residual criterion (ties go to the smaller lambda).
pub fn select_lambda(data: &MultiSourceData, config: &SsmrcdConfig, grid: &[f64]) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, SsmrcdFit)> = None;
    for &lambda in grid {
        let cfg = SsmrcdConfig { lambda, ..config.clone() };
        let f = fit(data, &cfg)?;
        let r = residual_criterion(data, &f.covset, config.alpha)?;
        trace.push((lambda, r));
        let better = match &best {
            None => true,
            Some((bl, br, _)) => r < *br || (r == *br && lambda < *bl),
        };
        if better {
            best = Some((lambda, r, f));
        }
    }
    let (lambda, _, fit) = best.expect("nonempty grid");
    Ok(LambdaSelection { lambda, trace, fit })
}

/// Band weight matrix: `max(width + 1 - |i - j|, 0)` off the diagonal, rows
/// scaled to sum to one.
pub fn band_weights(n_sources: usize, width: usize) -> Result<DMatrix<f64>> {
    if n_sources < 2 || width == 0 {
        return Err(Error::InvalidArgument(format!("band weights need N >= 2 and width >= 1, got {n_sources}, {width}")));
    }
    let mut w = DMatrix::from_fn(n_sources, n_sources, |i, j| {
        if i == j {
            0.0
        } else {
            (width as f64 + 1.0 - (i as f64 - j as f64).abs()).max(0.0)
        }
    });
    for mut row in w.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(w)
}

/// Uniform weights `1 / (N - 1)` off the diagonal.
pub fn uniform_weights(n_sources: usize) -> DMatrix<f64> {
    if n_sources == 1 {
        return DMatrix::zeros(1, 1);
    }
    DMatrix::from_fn(n_sources, n_sources, |i, j| if i == j { 0.0 } else { 1.0 / (n_sources as f64 - 1.0) })
}
