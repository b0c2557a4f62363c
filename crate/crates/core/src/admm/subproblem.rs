//! Per-source update of the variance block: a non-convex quadratic on the
//! unit sphere with orthogonality and half-space constraints, solved through
//! its KKT conditions.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::{newton_root, RootProblem, SymMatrix};

/// Newton iterations per call; the ADMM warm-starts every call.
pub const MAX_NEWTON_ITER: usize = 25;

/// `min -v'Σv + (ρ/2)||v + c||²` s.t. `v'v = 1`, `v'v_l = 0`, `z'v >= 0`.
#[derive(Debug, Clone)]
pub struct SourceSubproblem<'a> {
    pub sigma: &'a SymMatrix,
    pub c: DVector<f64>,
    pub priors: Vec<DVector<f64>>,
    pub z: DVector<f64>,
    pub rho: f64,
    pub warm: DVector<f64>,
    pub eps_root: f64,
}

#[derive(Debug, Clone)]
pub struct SourceSolution {
    pub v: DVector<f64>,
    pub lambdas: Vec<f64>,
    pub mu: f64,
    pub newton_iterations: usize,
}

impl SourceSubproblem<'_> {
    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        -self.sigma.quad_form(v) + 0.5 * self.rho * (v + &self.c).norm_squared()
    }

    // Unknowns x = (v, λ_1..λ_{k-1}, μ). Equations: stationarity with λ_0
    // substituted, orthogonality to each prior, complementary slackness.
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.c.len();
        let k = self.priors.len();
        let v = x.rows(0, p).into_owned();
        let mu = x[p + k];
        let sv = self.sigma.as_matrix() * &v;
        let cv = &self.c + &v;
        let lambda0 = v.dot(&sv) - 0.5 * self.rho * v.dot(&cv);
        let mut grad = -2.0 * &sv + self.rho * &cv - mu * &self.z + 2.0 * lambda0 * &v;
        for (l, prior) in self.priors.iter().enumerate() {
            grad += x[p + l] * prior;
        }
        let mut out = DVector::zeros(p + k + 1);
        out.rows_mut(0, p).copy_from(&grad);
        for (l, prior) in self.priors.iter().enumerate() {
            out[p + l] = v.dot(prior);
        }
        out[p + k] = mu * self.z.dot(&v);
        out
    }

    // Exact multipliers for a given v and μ, used to seed Newton.
    fn pack(&self, v: &DVector<f64>, mu: f64) -> DVector<f64> {
        let p = v.len();
        let k = self.priors.len();
        let sv = self.sigma.as_matrix() * v;
        let mut x = DVector::zeros(p + k + 1);
        x.rows_mut(0, p).copy_from(v);
        for (l, prior) in self.priors.iter().enumerate() {
            x[p + l] = 2.0 * prior.dot(&sv) - self.rho * prior.dot(&self.c) + mu * prior.dot(&self.z);
        }
        x[p + k] = mu;
        x
    }

    fn unpack(&self, x: &DVector<f64>, iterations: usize) -> SourceSolution {
        let p = self.c.len();
        let k = self.priors.len();
        SourceSolution {
            v: x.rows(0, p).into_owned(),
            lambdas: (0..k).map(|l| x[p + l]).collect(),
            mu: x[p + k],
            newton_iterations: iterations,
        }
    }

    /// Constraint violations allowed: `10 eps_root` on norm, orthogonality,
    /// the half-space and the sign of its multiplier.
    pub fn is_feasible(&self, sol: &SourceSolution) -> bool {
        let slack = 10.0 * self.eps_root;
        sol.v.iter().all(|x| x.is_finite())
            && (sol.v.norm_squared() - 1.0).abs() <= slack
            && self.priors.iter().all(|pr| pr.dot(&sol.v).abs() <= slack)
            && self.z.dot(&sol.v) >= -slack
            && sol.mu >= -slack
    }

    fn attempt(&self, seed: DVector<f64>) -> Option<SourceSolution> {
        let out = newton_root(&RootProblem {
            residual: |x: &DVector<f64>| self.residual(x),
            start: seed,
            tol: self.eps_root,
            max_iter: MAX_NEWTON_ITER,
        });
        if !out.converged {
            return None;
        }
        Some(self.unpack(&out.root, out.iterations))
    }

    // Unit vector orthogonal to the priors (and to z when `on_boundary`).
    fn feasible_direction(&self, v: &DVector<f64>, on_boundary: bool) -> Option<DVector<f64>> {
        let mut w = v.clone();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for b in self.priors.iter().chain(on_boundary.then_some(&self.z)) {
            let mut q = b.clone();
            for e in &basis {
                q -= e * e.dot(&q);
            }
            let n = q.norm();
            if n > 1e-12 {
                basis.push(q / n);
            }
        }
        for e in &basis {
            w -= e * e.dot(&w);
        }
        let n = w.norm();
        (n > 1e-12).then(|| w / n)
    }

    /// Newton from the warm start; a root on the wrong side of the half-space
    /// is retried on its boundary with a positive multiplier, then from the
    /// direction of `-c`. Roots that only satisfy the half-space within the
    /// feasibility slack are a last resort (lowest objective wins).
    pub fn solve(&self, source_index: usize) -> Result<SourceSolution> {
        let mut seeds = vec![self.pack(&self.warm, 0.0)];
        if let Some(b) = self.feasible_direction(&self.warm, true) {
            let sv = self.sigma.as_matrix() * &b;
            let zz = self.z.norm_squared().max(1e-300);
            let mu = (self.z.dot(&(self.rho * (&self.c + &b) - 2.0 * sv)) / zz).max(1e-3);
            seeds.push(self.pack(&b, mu));
        }
        if let Some(d) = self.feasible_direction(&(-&self.c), false) {
            seeds.push(self.pack(&d, 0.0));
        }
        let mut loose: Option<(f64, SourceSolution)> = None;
        for seed in seeds {
            let Some(sol) = self.attempt(seed) else { continue };
            if !self.is_feasible(&sol) {
                continue;
            }
            if self.z.dot(&sol.v) >= -0.1 * self.eps_root {
                return Ok(sol);
            }
            let f = self.objective(&sol.v);
            if loose.as_ref().is_none_or(|(best, _)| f < *best) {
                loose = Some((f, sol));
            }
        }
        loose.map(|(_, sol)| sol).ok_or(Error::RhoEscalationNeeded { source_index, rho: self.rho })
    }
}
