use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Chi-square CDF via the regularized lower incomplete gamma function.
pub fn chi2_cdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

fn chi2_pdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = df as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Quantile of the chi-square distribution, found by Newton steps safeguarded
/// by a bisection bracket.
pub fn chi2_quantile(prob: f64, df: u32) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidArgument(format!("probability {prob} outside (0, 1)")));
    }
    if df == 0 {
        return Err(Error::InvalidArgument("degrees of freedom must be positive".into()));
    }
    let mut lo = 0.0_f64;
    let mut hi = (df as f64).max(1.0);
    while chi2_cdf(hi, df) < prob {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let err = chi2_cdf(x, df) - prob;
        if err.abs() <= 1e-13 {
            break;
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = chi2_pdf(x, df);
        let newton = if pdf > 0.0 { x - err / pdf } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(x)
}
