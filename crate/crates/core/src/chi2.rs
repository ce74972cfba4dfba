//! Central χ² quantiles from the regularized lower incomplete gamma function.

use statrs::function::gamma::gamma_lr;

use crate::error::{FdiError, Result};

const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-12;

/// CDF of the central χ² distribution with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

fn chi2_pdf(dof: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * (x / 2.0).ln() - x / 2.0 - statrs::function::gamma::ln_gamma(k)).exp() / 2.0
}

/// `p`-quantile of the central χ² distribution.
///
/// Newton steps on the CDF, safeguarded by a bisection bracket.
pub fn chi2_quantile(dof: u32, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(FdiError::domain("χ² degrees of freedom must be ≥ 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(FdiError::domain(format!("probability {p} outside (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(FdiError::Convergence {
                iterations: 0,
                residual: p,
            });
        }
    }
    let mut x = 0.5 * (lo + hi);
    for it in 0..MAX_ITER {
        let f = chi2_cdf(dof, x) - p;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(dof, x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= REL_TOL * next.abs() || hi - lo <= REL_TOL * hi {
            return Ok(next);
        }
        x = next;
        if it + 1 == MAX_ITER {
            return Err(FdiError::Convergence {
                iterations: MAX_ITER,
                residual: f,
            });
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_thresholds() {
        let q4 = chi2_quantile(4, 0.99).unwrap();
        assert!((13.27..=13.29).contains(&q4), "{q4}");
        let q1 = chi2_quantile(1, 0.99).unwrap();
        assert!((6.63..=6.64).contains(&q1), "{q1}");
    }

    #[test]
    fn two_dof_closed_form() {
        let p = 1.0 - (-1.0f64).exp();
        let q = chi2_quantile(2, p).unwrap();
        assert!((q - 2.0).abs() <= 1e-8 * 2.0, "{q}");
        // χ²₂ CDF is 1 − exp(−x/2), quantile −2 ln(1 − p)
        for p in [0.01, 0.3, 0.9, 0.999_999] {
            let exact = -2.0 * (1.0 - p as f64).ln();
            let q = chi2_quantile(2, p).unwrap();
            assert!((q - exact).abs() <= 1e-8 * exact, "{p}: {q} vs {exact}");
        }
    }

    #[test]
    fn one_dof_matches_normal_square() {
        // P(Z² ≤ 1.959963984540054²) = 0.95
        let z = 1.959_963_984_540_054_f64;
        let q = chi2_quantile(1, 0.95).unwrap();
        assert!((q - z * z).abs() <= 1e-8 * z * z);
    }

    #[test]
    fn roundtrip_many_dofs() {
        for dof in 1..=30 {
            for p in [1e-6, 0.05, 0.5, 0.95, 0.99, 1.0 - 1e-9] {
                let q = chi2_quantile(dof, p).unwrap();
                assert!((chi2_cdf(dof, q) - p).abs() < 1e-10, "dof {dof} p {p}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(chi2_quantile(0, 0.5).is_err());
        assert!(chi2_quantile(3, 0.0).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());
        assert!(chi2_quantile(3, f64::NAN).is_err());
    }
}
