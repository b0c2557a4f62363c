use nalgebra::DMatrix;

/// `sign(x) max(|x| - t, 0)`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Block soft thresholding `max(1 - t / ||x||, 0) x`; the zero vector maps to itself.
pub fn group_soft_threshold(row: &[f64], t: f64) -> Vec<f64> {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; row.len()];
    }
    let scale = (1.0 - t / norm).max(0.0);
    row.iter().map(|x| x * scale).collect()
}

pub(crate) fn soft_threshold_matrix(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    m.map(|x| soft_threshold(x, t))
}

/// Row-wise block soft thresholding; rows are the variables.
pub(crate) fn group_soft_threshold_rows(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        let scale = if norm == 0.0 { 0.0 } else { (1.0 - t / norm).max(0.0) };
        row *= scale;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_cases() {
        assert!((soft_threshold(1.0, 0.3) - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(0.2, 0.3), 0.0);
        assert!((soft_threshold(-1.0, 0.3) + 0.7).abs() < 1e-15);
    }

    #[test]
    fn group_cases() {
        assert_eq!(group_soft_threshold(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
        let r = group_soft_threshold(&[3.0, 4.0], 2.5);
        assert!((r[0] - 1.5).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
        assert_eq!(group_soft_threshold(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn matrix_helpers_agree_with_scalar_versions() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.1, -0.2]);
        let g = group_soft_threshold_rows(&m, 2.5);
        assert_eq!(g.row(0).iter().cloned().collect::<Vec<_>>(), group_soft_threshold(&[3.0, 4.0], 2.5));
        assert_eq!(g.row(1).iter().cloned().collect::<Vec<_>>(), vec![0.0, 0.0]);
        let s = soft_threshold_matrix(&m, 0.15);
        assert!((s[(1, 1)] + 0.05).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn soft_threshold_is_grid_minimizer(c in -2.5f64..2.5, t in 0.0f64..1.5) {
            let f = |z: f64| t * z.abs() + 0.5 * (z - c) * (z - c);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=60_000 {
                let z = -3.0 + k as f64 * 1e-4;
                let v = f(z);
                if v < best.0 { best = (v, z); }
            }
            prop_assert!((soft_threshold(c, t) - best.1).abs() < 1e-3);
        }

        #[test]
        fn group_threshold_is_grid_minimizer(c0 in -1.5f64..1.5, c1 in -1.5f64..1.5, t in 0.0f64..1.0) {
            let f = |a: f64, b: f64| t * (a * a + b * b).sqrt() + 0.5 * ((a - c0).powi(2) + (b - c1).powi(2));
            // convex objective: a coarse scan brackets the minimizer, a fine scan pins it
            let scan = |lo0: f64, lo1: f64, step: f64, n: usize| {
                let mut best = (f64::INFINITY, 0.0, 0.0);
                for i in 0..=n {
                    let a = lo0 + i as f64 * step;
                    for j in 0..=n {
                        let b = lo1 + j as f64 * step;
                        let v = f(a, b);
                        if v < best.0 { best = (v, a, b); }
                    }
                }
                best
            };
            let coarse = scan(-1.5, -1.5, 0.01, 300);
            let best = scan(coarse.1 - 0.02, coarse.2 - 0.02, 1e-4, 400);
            let r = group_soft_threshold(&[c0, c1], t);
            prop_assert!((r[0] - best.1).abs() <= 1e-3 && (r[1] - best.2).abs() <= 1e-3);
        }
    }
}
