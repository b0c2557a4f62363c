//! Dense numerical kernels shared by the estimators and the solver.

mod chi2;
mod eigen;
mod root;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use eigen::{inv_sqrt_psd, sym_eigen, EigenDecomposition, SymMatrix, DEFAULT_PSD_FLOOR};
pub use root::{newton_root, RootOutcome, RootProblem};

use nalgebra::DVector;

/// Flips `v` so that its largest-magnitude entry is positive. Near-ties
/// (within 1e-10 of the maximum) resolve to the lowest index.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    if let Some(j) = v.iter().position(|x| x.abs() >= max - 1e-10) {
        if v[j] < 0.0 {
            v.neg_mut();
        }
    }
}
