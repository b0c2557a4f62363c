//! Consensus ADMM for one sparse multi-source principal component and the
//! sequential fit of several components.
//!
//! Internally every stacked vector of length `p N` is held as a `p x N`
//! matrix; its column-major storage is the stacked layout.

mod prox;
mod subproblem;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use prox::{group_soft_threshold, soft_threshold};
pub use subproblem::{SourceSolution, SourceSubproblem, MAX_NEWTON_ITER};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, SymMatrix};
use crate::start::make_start_or_perturb;
use crate::types::{CovarianceSet, LoadingsMatrix, LoadingsSet};
use prox::{group_soft_threshold_rows, soft_threshold_matrix};

/// Sources are solved in parallel above this dimension.
const PARALLEL_MIN_P: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub eps_admm: f64,
    pub eps_root: f64,
    pub eps_thr: f64,
    pub m_max: usize,
    pub rho_override: Option<f64>,
    pub rho_escalation: f64,
    pub max_escalations: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            eps_admm: 1e-4,
            eps_root: 1e-2,
            eps_thr: 5e-3,
            m_max: 2000,
            rho_override: None,
            rho_escalation: 2.0,
            max_escalations: 8,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.eps_admm) && positive(self.eps_root) && positive(self.eps_thr)) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.m_max == 0 {
            return Err(Error::InvalidArgument("m_max must be positive".into()));
        }
        if let Some(r) = self.rho_override {
            if !positive(r) {
                return Err(Error::InvalidArgument(format!("rho must be positive, got {r}")));
            }
        }
        if !(self.rho_escalation.is_finite() && self.rho_escalation > 1.0) {
            return Err(Error::InvalidArgument("rho_escalation must exceed 1".into()));
        }
        Ok(())
    }
}

/// Iterates of the splitting: consensus `v0`, blocks `v1..v3`, duals `u1..u3`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub v0: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub v3: DMatrix<f64>,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
    pub m: usize,
    pub r: f64,
    pub s: f64,
    pub rho: f64,
}

impl AdmmState {
    pub fn new(start: &LoadingsMatrix, rho: f64) -> Self {
        let z = DMatrix::zeros(start.p(), start.n_sources());
        Self {
            v0: start.0.clone(),
            v1: z.clone(),
            v2: z.clone(),
            v3: z.clone(),
            u1: z.clone(),
            u2: z.clone(),
            u3: z,
            m: 0,
            r: f64::INFINITY,
            s: f64::INFINITY,
            rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcResult {
    pub loadings: LoadingsMatrix,
    /// ADMM iterations of the accepted run.
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective at `loadings`.
    pub objective: f64,
    pub rho_used: f64,
    pub escalations: usize,
    /// Sources whose block was zeroed entirely by thresholding.
    pub fully_sparse_sources: Vec<usize>,
    /// The ADMM ended above the starting objective and the start was kept.
    pub kept_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub r: f64,
    pub s: f64,
    pub eps_prime: f64,
    pub eps_dual: f64,
}

impl Residuals {
    pub fn converged(&self) -> bool {
        self.r < self.eps_prime && self.s < self.eps_dual
    }
}

fn uses_group_block(gamma: f64) -> bool {
    gamma < 1.0
}

/// `rho_k = eta + (1 / 2N) sum_i (tr S_i - sum_l v_l' S_i v_l)`.
pub fn rho_default(covset: &CovarianceSet, eta: f64, priors: &LoadingsSet) -> f64 {
    let n = covset.n_sources() as f64;
    let left: f64 = covset
        .sigmas
        .iter()
        .enumerate()
        .map(|(i, s)| s.trace() - priors.components.iter().map(|v| s.quad_form(&v.column(i))).sum::<f64>())
        .sum();
    eta + left / (2.0 * n)
}

/// Orthonormal basis of the prior blocks of one source.
fn prior_basis(priors: &LoadingsSet, i: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(priors.len());
    for c in &priors.components {
        let mut q = c.column(i);
        for e in &basis {
            q -= e * e.dot(&q);
        }
        let n = q.norm();
        if n > 1e-12 {
            basis.push(q / n);
        }
    }
    basis
}

/// Per source: remove the span of the prior blocks and normalize. With no
/// priors this only normalizes.
pub fn project_orthogonal(v: &LoadingsMatrix, priors: &LoadingsSet) -> Result<LoadingsMatrix> {
    let mut out = v.clone();
    for i in 0..v.n_sources() {
        let mut w = v.column(i);
        let scale = w.norm();
        for e in prior_basis(priors, i) {
            w -= &e * e.dot(&w);
        }
        let n = w.norm();
        if !(n > 1e-10 * scale.max(f64::MIN_POSITIVE)) || !n.is_finite() {
            return Err(Error::DegenerateProjection { source_index: i });
        }
        out.0.set_column(i, &(w / n));
    }
    Ok(out)
}

/// `-sum_i v_i' S_i v_i + eta gamma ||v||_1 + eta (1 - gamma) sqrt(N) sum_j ||v_j.||`.
pub fn penalized_objective(covset: &CovarianceSet, v: &LoadingsMatrix, eta: f64, gamma: f64) -> f64 {
    let n = v.n_sources() as f64;
    let variance: f64 = covset.explained_by_source(v).iter().sum();
    let l1: f64 = v.0.iter().map(|x| x.abs()).sum();
    let group: f64 = v.0.row_iter().map(|r| r.norm()).sum();
    -variance + eta * gamma * l1 + eta * (1.0 - gamma) * n.sqrt() * group
}

/// Consensus average of the active blocks (optionally projected onto the
/// feasible set) followed by the dual updates.
pub fn consensus_and_duals(state: &mut AdmmState, gamma: f64, project: Option<&LoadingsSet>) -> Result<()> {
    let rho = state.rho;
    let mut avg = &state.v1 + &state.u1 / rho + &state.v2 + &state.u2 / rho;
    if uses_group_block(gamma) {
        avg += &state.v3 + &state.u3 / rho;
        avg /= 3.0;
    } else {
        avg /= 2.0;
    }
    if let Some(priors) = project {
        avg = project_orthogonal(&LoadingsMatrix(avg), priors)?.0;
    }
    state.v0 = avg;
    state.u1 += (&state.v1 - &state.v0) * rho;
    state.u2 += (&state.v2 - &state.v0) * rho;
    if uses_group_block(gamma) {
        state.u3 += (&state.v3 - &state.v0) * rho;
    }
    Ok(())
}

/// Primal and dual residuals with their tolerances; the block count is two
/// when the group block is inactive.
pub fn residuals_and_tolerances(state: &AdmmState, prev_v0: &DMatrix<f64>, gamma: f64, eps: f64) -> Residuals {
    let group = uses_group_block(gamma);
    let blocks = if group { 3.0 } else { 2.0 };
    let mut r = (&state.v1 - &state.v0).norm_squared() + (&state.v2 - &state.v0).norm_squared();
    let mut vmax = state.v1.norm().max(state.v2.norm()).max(state.v0.norm());
    let mut umax = state.u1.norm().max(state.u2.norm());
    if group {
        r += (&state.v3 - &state.v0).norm_squared();
        vmax = vmax.max(state.v3.norm());
        umax = umax.max(state.u3.norm());
    }
    let s = blocks * state.rho * state.rho * (&state.v0 - prev_v0).norm_squared();
    let floor = ((state.v0.len()) as f64).sqrt() * eps;
    Residuals { r, s, eps_prime: floor + eps * vmax, eps_dual: floor + eps * umax }
}

/// Variance block update for every source.
pub fn solve_v1(
    covset: &CovarianceSet,
    state: &AdmmState,
    priors: &LoadingsSet,
    z: &LoadingsMatrix,
    eps_root: f64,
) -> Result<DMatrix<f64>> {
    let (p, n) = (covset.p(), covset.n_sources());
    let solve = |i: usize| -> Result<DVector<f64>> {
        let v0 = state.v0.column(i).into_owned();
        let prob = SourceSubproblem {
            sigma: &covset.sigmas[i],
            c: state.u1.column(i) / state.rho - &v0,
            priors: priors.components.iter().map(|c| c.column(i)).collect(),
            z: z.column(i),
            rho: state.rho,
            warm: v0,
            eps_root,
        };
        Ok(prob.solve(i)?.v)
    };
    let cols: Vec<Result<DVector<f64>>> =
        if p >= PARALLEL_MIN_P { (0..n).into_par_iter().map(solve).collect() } else { (0..n).map(solve).collect() };
    let mut out = DMatrix::zeros(p, n);
    for (i, c) in cols.into_iter().enumerate() {
        out.set_column(i, &c?);
    }
    Ok(out)
}

struct Run {
    v0: DMatrix<f64>,
    iterations: usize,
    converged: bool,
}

fn run_admm(
    covset: &CovarianceSet,
    eta: f64,
    gamma: f64,
    priors: &LoadingsSet,
    start: &LoadingsMatrix,
    rho: f64,
    config: &AdmmConfig,
) -> Result<Run> {
    let n = covset.n_sources() as f64;
    let mut state = AdmmState::new(start, rho);
    while state.m < config.m_max {
        state.m += 1;
        let prev = state.v0.clone();
        state.v1 = solve_v1(covset, &state, priors, start, config.eps_root)?;
        state.v2 = soft_threshold_matrix(&(&state.v0 - &state.u2 / rho), eta * gamma / rho);
        if uses_group_block(gamma) {
            let t = eta * (1.0 - gamma) * n.sqrt() / rho;
            state.v3 = group_soft_threshold_rows(&(&state.v0 - &state.u3 / rho), t);
        }
        consensus_and_duals(&mut state, gamma, Some(priors)).map_err(|e| match e {
            Error::DegenerateProjection { source_index } => Error::RhoEscalationNeeded { source_index, rho },
            other => other,
        })?;
        let res = residuals_and_tolerances(&state, &prev, gamma, config.eps_admm);
        state.r = res.r;
        state.s = res.s;
        if res.converged() {
            return Ok(Run { v0: state.v0, iterations: state.m, converged: true });
        }
    }
    Ok(Run { v0: state.v0, iterations: state.m, converged: false })
}

/// Final projection, thresholding and per-source renormalization.
fn finish(v0: DMatrix<f64>, priors: &LoadingsSet, eps_thr: f64) -> Result<(LoadingsMatrix, Vec<usize>)> {
    let mut v = project_orthogonal(&LoadingsMatrix(v0), priors)?;
    v.0.iter_mut().filter(|x| x.abs() < eps_thr).for_each(|x| *x = 0.0);
    let mut empty = Vec::new();
    for i in 0..v.n_sources() {
        let norm = v.0.column(i).norm();
        if norm == 0.0 {
            empty.push(i);
        } else {
            v.0.column_mut(i).unscale_mut(norm);
        }
    }
    Ok((v, empty))
}

/// Sparse loadings of the next component given `priors`, starting from the
/// projected average of the two extreme solutions.
pub fn solve_component(
    covset: &CovarianceSet,
    eta: f64,
    gamma: f64,
    priors: &LoadingsSet,
    config: &AdmmConfig,
) -> Result<PcResult> {
    let start = make_start_or_perturb(covset, gamma, priors.len(), priors, 0)?;
    solve_component_from(covset, eta, gamma, priors, &start, config)
}

/// As [`solve_component`] with an explicit start, which is also the
/// half-space direction.
pub fn solve_component_from(
    covset: &CovarianceSet,
    eta: f64,
    gamma: f64,
    priors: &LoadingsSet,
    start: &LoadingsMatrix,
    config: &AdmmConfig,
) -> Result<PcResult> {
    config.validate()?;
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be nonnegative, got {eta}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if start.p() != covset.p() || start.n_sources() != covset.n_sources() {
        return Err(Error::Dimension("start does not match the covariance set".into()));
    }
    if priors.len() >= covset.p() {
        return Err(Error::Index(format!("component {} with p = {}", priors.len(), covset.p())));
    }
    let start = project_orthogonal(start, priors)?;
    let start_objective = penalized_objective(covset, &start, eta, gamma);
    let from_start = |converged: bool, rho: f64, escalations: usize, iterations: usize| PcResult {
        loadings: start.clone(),
        iterations,
        converged,
        objective: start_objective,
        rho_used: rho,
        escalations,
        fully_sparse_sources: Vec::new(),
        kept_start: true,
    };

    let mut rho = config.rho_override.unwrap_or_else(|| rho_default(covset, eta, priors));
    if covset.sigmas.iter().all(|s| s.as_matrix().iter().all(|x| *x == 0.0)) {
        return Ok(from_start(true, rho, 0, 0));
    }
    if !(rho > 0.0) {
        rho = config.rho_override.unwrap_or(1.0);
    }

    let mut fallback: Option<(Run, f64, usize)> = None;
    for escalation in 0..=config.max_escalations {
        match run_admm(covset, eta, gamma, priors, &start, rho, config) {
            Ok(run) if run.converged => {
                return accept(covset, eta, gamma, priors, run, rho, escalation, config, &start, start_objective);
            }
            Ok(run) => fallback = Some((run, rho, escalation)),
            Err(Error::RhoEscalationNeeded { .. }) => {}
            Err(e) => return Err(e),
        }
        rho *= config.rho_escalation;
    }
    let last_rho = rho / config.rho_escalation;
    match fallback {
        Some((run, rho, esc)) => accept(covset, eta, gamma, priors, run, rho, esc, config, &start, start_objective),
        None => Ok(from_start(false, last_rho, config.max_escalations, 0)),
    }
}

#[allow(clippy::too_many_arguments)]
fn accept(
    covset: &CovarianceSet,
    eta: f64,
    gamma: f64,
    priors: &LoadingsSet,
    run: Run,
    rho: f64,
    escalations: usize,
    config: &AdmmConfig,
    start: &LoadingsMatrix,
    start_objective: f64,
) -> Result<PcResult> {
    let (loadings, fully_sparse_sources) = finish(run.v0, priors, config.eps_thr)?;
    let objective = penalized_objective(covset, &loadings, eta, gamma);
    if objective > start_objective + 1e-6 {
        return Ok(PcResult {
            loadings: start.clone(),
            iterations: run.iterations,
            converged: run.converged,
            objective: start_objective,
            rho_used: rho,
            escalations,
            fully_sparse_sources: Vec::new(),
            kept_start: true,
        });
    }
    Ok(PcResult {
        loadings,
        iterations: run.iterations,
        converged: run.converged,
        objective,
        rho_used: rho,
        escalations,
        fully_sparse_sources,
        kept_start: false,
    })
}

/// Largest eigenvalue of each `S_i` restricted to the complement of the
/// prior loadings of source `i`, summed over sources.
pub fn residual_leading_variance(covset: &CovarianceSet, priors: &LoadingsSet) -> Result<f64> {
    let p = covset.p();
    let mut total = 0.0;
    for (i, s) in covset.sigmas.iter().enumerate() {
        let mut proj = DMatrix::<f64>::identity(p, p);
        for e in prior_basis(priors, i) {
            proj -= &e * e.transpose();
        }
        let reduced = SymMatrix::symmetrize(&proj * s.as_matrix() * &proj);
        total += sym_eigen(&reduced)?.values[0];
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFit {
    pub loadings: LoadingsSet,
    pub results: Vec<PcResult>,
    /// Penalty used for each component.
    pub etas: Vec<f64>,
}

impl PcaFit {
    pub fn converged(&self) -> bool {
        self.results.iter().all(|r| r.converged)
    }
}

/// Components `0..n_components`, each with its penalty scaled by the share
/// of leading residual variance relative to the first component.
pub fn fit_pca(
    covset: &CovarianceSet,
    eta: f64,
    gamma: f64,
    n_components: usize,
    config: &AdmmConfig,
) -> Result<PcaFit> {
    if n_components == 0 || n_components > covset.p() {
        return Err(Error::InvalidArgument(format!(
            "number of components must lie in 1..={}, got {n_components}",
            covset.p()
        )));
    }
    fit_sequential(covset, eta, gamma, n_components, config, |_| false)
}

/// Like [`fit_pca`], adding components until their cumulative share of the
/// total variance reaches `threshold` (or all `p` are fitted).
pub fn fit_pca_to_cpv(covset: &CovarianceSet, eta: f64, gamma: f64, threshold: f64, config: &AdmmConfig) -> Result<PcaFit> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("CPV threshold must lie in (0, 1], got {threshold}")));
    }
    let total = covset.total_trace();
    if !(total > 0.0) {
        return Err(Error::InvalidMatrix("total variance is zero".into()));
    }
    fit_sequential(covset, eta, gamma, covset.p(), config, |fitted| {
        let explained: f64 = fitted.components.iter().map(|v| covset.explained_variance(v)).sum();
        explained / total >= threshold
    })
}

fn fit_sequential(
    covset: &CovarianceSet,
    eta: f64,
    gamma: f64,
    max_components: usize,
    config: &AdmmConfig,
    mut done: impl FnMut(&LoadingsSet) -> bool,
) -> Result<PcaFit> {
    covset.validate()?;
    let mut priors = LoadingsSet::default();
    let mut results = Vec::with_capacity(max_components);
    let mut etas = Vec::with_capacity(max_components);
    let g1 = residual_leading_variance(covset, &priors)?;
    for l in 0..max_components {
        let g = if l == 0 || g1 <= 0.0 { 1.0 } else { residual_leading_variance(covset, &priors)? / g1 };
        let eta_l = g * eta;
        let res = solve_component(covset, eta_l, gamma, &priors, config)?;
        priors.components.push(res.loadings.clone());
        results.push(res);
        etas.push(eta_l);
        if done(&priors) {
            break;
        }
    }
    Ok(PcaFit { loadings: priors, results, etas })
}

#[cfg(test)]
mod tests;
