use nalgebra::{DMatrix, DVector};

const MAX_HALVINGS: usize = 20;

/// A square nonlinear system `F(x) = 0` together with solver controls.
pub struct RootProblem<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub residual: F,
    pub start: DVector<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct RootOutcome {
    pub root: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the residual at `root`.
    pub residual_norm: f64,
}

// Accepts x when ||F(x)||_inf <= 0.1 tol ||F(x)||_inf + 0.1 tol.
fn accept(f_inf: f64, tol: f64) -> bool {
    f_inf <= 0.1 * tol * f_inf + 0.1 * tol
}

/// Damped Newton iteration with a forward-difference Jacobian.
///
/// Each Newton step is halved (at most 20 times) until the Euclidean residual
/// norm decreases. Returns `converged = false` if the iteration budget runs out
/// or no decreasing step exists.
pub fn newton_root<F>(problem: &RootProblem<F>) -> RootOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f = &problem.residual;
    let mut x = problem.start.clone();
    let mut fx = f(&x);
    let d = x.len();

    for iter in 0..problem.max_iter {
        let f_inf = fx.amax();
        if !f_inf.is_finite() {
            return RootOutcome { root: x, converged: false, iterations: iter, residual_norm: f_inf };
        }
        if accept(f_inf, problem.tol) {
            return RootOutcome { root: x, converged: true, iterations: iter, residual_norm: f_inf };
        }

        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let h = (1e-7 * x[j].abs()).max(1e-7);
            let mut xh = x.clone();
            xh[j] += h;
            let col = (f(&xh) - &fx) / h;
            jac.set_column(j, &col);
        }
        let step = match jac.clone().lu().solve(&(-&fx)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            // singular Jacobian: fall back to a regularized least-squares step
            _ => {
                let jt = jac.transpose();
                let mut normal = &jt * &jac;
                let ridge = 1e-10 * (1.0 + normal.diagonal().amax());
                for k in 0..d {
                    normal[(k, k)] += ridge;
                }
                match normal.cholesky() {
                    Some(ch) => ch.solve(&(-(&jt * &fx))),
                    None => {
                        return RootOutcome { root: x, converged: false, iterations: iter, residual_norm: f_inf }
                    }
                }
            }
        };

        let norm0 = fx.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &x + &step * t;
            let fc = f(&cand);
            if fc.norm() < norm0 {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return RootOutcome { root: x, converged: false, iterations: iter + 1, residual_norm: f_inf };
        }
    }

    let f_inf = fx.amax();
    RootOutcome {
        root: x,
        converged: f_inf.is_finite() && accept(f_inf, problem.tol),
        iterations: problem.max_iter,
        residual_norm: f_inf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_quadratic() {
        let out = newton_root(&RootProblem {
            residual: |x: &DVector<f64>| DVector::from_element(1, x[0] * x[0] - 4.0),
            start: DVector::from_element(1, 3.0),
            tol: 1e-10,
            max_iter: 50,
        });
        assert!(out.converged);
        assert!((out.root[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn linear_system_in_two_iterations() {
        let out = newton_root(&RootProblem {
            residual: |x: &DVector<f64>| DVector::from_vec(vec![x[0] + x[1] - 1.0, x[0] - x[1]]),
            start: DVector::from_vec(vec![1.0, 1.0]),
            tol: 1e-10,
            max_iter: 50,
        });
        assert!(out.converged);
        assert!(out.iterations <= 2);
        assert!((out.root[0] - 0.5).abs() < 1e-9 && (out.root[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn converged_flag_implies_residual_bound() {
        let tol = 1e-3;
        let out = newton_root(&RootProblem {
            residual: |x: &DVector<f64>| DVector::from_vec(vec![x[0].exp() - 2.0, x[1].powi(3) - x[0]]),
            start: DVector::from_vec(vec![0.0, 0.5]),
            tol,
            max_iter: 50,
        });
        assert!(out.converged);
        assert!(out.residual_norm <= 0.1 * tol * out.residual_norm + 0.1 * tol);
    }

    #[test]
    fn no_root_reports_failure() {
        let out = newton_root(&RootProblem {
            residual: |x: &DVector<f64>| DVector::from_element(1, x[0] * x[0] + 1.0),
            start: DVector::from_element(1, 0.5),
            tol: 1e-8,
            max_iter: 30,
        });
        assert!(!out.converged);
    }

    // KKT of max vᵀSv on the unit circle, unknowns (v1, v2, lambda):
    // 2 S v - 2 lambda v = 0, vᵀv - 1 = 0. Compare to a 1e-3 angular grid search.
    #[test]
    fn kkt_of_two_variable_pca_matches_grid_search() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let sc = s.clone();
        let out = newton_root(&RootProblem {
            residual: move |x: &DVector<f64>| {
                let v = DVector::from_vec(vec![x[0], x[1]]);
                let g = &sc * &v * 2.0 - &v * (2.0 * x[2]);
                DVector::from_vec(vec![g[0], g[1], v.dot(&v) - 1.0])
            },
            start: DVector::from_vec(vec![0.9, 0.3, 1.5]),
            tol: 1e-10,
            max_iter: 50,
        });
        assert!(out.converged);
        let mut best = (f64::NEG_INFINITY, 0.0);
        let steps = (std::f64::consts::PI / 1e-3) as usize;
        for k in 0..=steps {
            let a = k as f64 * 1e-3;
            let v = DVector::from_vec(vec![a.cos(), a.sin()]);
            let val = v.dot(&(&s * &v));
            if val > best.0 {
                best = (val, a);
            }
        }
        let angle = out.root[1].atan2(out.root[0]).rem_euclid(std::f64::consts::PI);
        assert!((angle - best.1).abs() < 1e-3, "{angle} vs {}", best.1);
    }
}
