//! Small numeric kernels shared by the likelihood, transport and baseline code.

use std::f64::consts::PI;

use crate::error::{Result, VebmError};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `log Σ exp(v_i)`, shifted by the maximum so large inputs do not overflow.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(VebmError::Empty("log_sum_exp of an empty vector"));
    }
    Ok(lse(v))
}

/// Unchecked variant for hot loops; returns `-inf` on empty input.
#[inline]
pub(crate) fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log-density of `N(mean, sd²)` at `x`.
#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

// Lanczos approximation, g = 7, nine coefficients.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    LANCZOS_COEF[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS_COEF[0], |acc, (i, c)| {
            acc + c / (x + (i + 1) as f64)
        })
}

/// `(x-1)!` when `x` is an integer the product can represent.
fn integer_gamma(x: f64) -> Option<f64> {
    (x.fract() == 0.0 && (1.0..=171.0).contains(&x))
        .then(|| (1..x as u64).map(|k| k as f64).product())
}

/// Gamma function for `x > 0` (reflection below 0.5). Exact at small
/// integers, Lanczos elsewhere.
pub fn gamma(x: f64) -> f64 {
    if let Some(g) = integer_gamma(x) {
        return g;
    }
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * lanczos_sum(x)
}

/// `ln Γ(x)` for `x > 0`. Stays finite where `gamma` would overflow.
pub fn ln_gamma(x: f64) -> f64 {
    if let Some(g) = integer_gamma(x) {
        return g.ln();
    }
    if x < 0.5 {
        return (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    HALF_LN_2PI + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_of_zeros_is_ln2() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lse_does_not_overflow() {
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn lse_matches_direct_sum() {
        let v = [-1.0, 2.0, 0.5];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn lse_rejects_empty() {
        assert_eq!(
            log_sum_exp(&[]),
            Err(VebmError::Empty("log_sum_exp of an empty vector"))
        );
    }

    #[test]
    fn lse_with_neg_inf_entries() {
        let v = log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn gamma_known_values() {
        let half_sqrt_pi = PI.sqrt() / 2.0;
        assert!((gamma(1.5) - half_sqrt_pi).abs() / half_sqrt_pi < 1e-13);
        assert!((gamma(1.0) - 1.0).abs() < 1e-14);
        assert!((gamma(2.0) - 1.0).abs() < 1e-14);
        assert!((gamma(5.0) - 24.0).abs() / 24.0 < 1e-13);
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn gamma_on_unit_interval_matches_ln_gamma_and_recurrence() {
        // Γ(x+1) = xΓ(x) ties [1, 2] to [2, 3] independently of the grid point.
        for k in 0..=100 {
            let x = 1.0 + k as f64 / 100.0;
            let lhs = gamma(x + 1.0);
            let rhs = x * gamma(x);
            assert!((lhs - rhs).abs() / rhs < 1e-13, "x = {x}");
            assert!((ln_gamma(x) - gamma(x).ln()).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn ln_gamma_matches_log_factorial() {
        let ln_fact_100: f64 = (1..=100).map(|k| (k as f64).ln()).sum();
        assert!((ln_gamma(101.0) - ln_fact_100).abs() / ln_fact_100 < 1e-13);
    }
}
