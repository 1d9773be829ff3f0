//! Chi-square and standard normal distribution functions.

use statrs::function::gamma;

use crate::error::{Error, Result};

/// Lower-tail probability of `chi2(dof)` at `x`.
pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma::gamma_lr(dof as f64 / 2.0, x / 2.0)
}

pub fn chi2_pdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = dof as f64 / 2.0;
    ((a - 1.0) * x.ln() - x / 2.0 - a * std::f64::consts::LN_2 - gamma::ln_gamma(a)).exp()
}

/// Quantile of `chi2(dof)`: inverse of the regularized lower incomplete gamma
/// function with shape `dof / 2` and scale 2.
///
/// Safeguarded Newton iteration inside a bisection bracket.
pub fn chi2_quantile(dof: usize, prob: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidInput("chi-square needs at least 1 degree of freedom".into()));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidInput(format!("probability must lie in (0, 1), got {prob}")));
    }
    let k = dof as f64;
    // Wilson-Hilferty starting point
    let z = normal_quantile_approx(prob);
    let c = 2.0 / (9.0 * k);
    let mut x = (k * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);

    let mut lo = 0.0_f64;
    let mut hi = x.max(1.0);
    while chi2_cdf(dof, hi) < prob {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let f = chi2_cdf(dof, x) - prob;
        if f.abs() < 1e-15 {
            break;
        }
        if f < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let d = chi2_pdf(dof, x);
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

// Rational approximation (Abramowitz-Stegun 26.2.23), only used to seed the
// chi-square root finder.
fn normal_quantile_approx(p: f64) -> f64 {
    let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let t = (-2.0 * q.ln()).sqrt();
    let num = 2.515517 + 0.802853 * t + 0.010328 * t * t;
    let den = 1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t;
    sign * (t - num / den)
}
