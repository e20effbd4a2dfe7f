//! The Langevin function `L(x) = coth(x) - 1/x` and its derivatives.
//!
//! Two evaluation branches are used:
//!
//! * `|x| < SERIES_SWITCH`: the odd power series
//!   `L(x) = sum_{n>=1} (-1)^(n+1) 2 zeta(2n) / pi^(2n) x^(2n-1)`,
//!   differentiated term by term. Its radius of convergence is `pi` (poles of
//!   `coth` at `i*pi*n`), so at the switch point the terms shrink by
//!   `(1.5/pi)^2` per step.
//! * `|x| >= SERIES_SWITCH`: `coth(x) - 1/x` for the function itself and, for
//!   derivatives, the exponential expansion
//!   `coth^(k)(x) = 2 sum_{n>=1} (-2n)^k e^(-2nx)` minus the derivative of
//!   `1/x`, which avoids the cancellation of polynomial-in-coth forms near 1.
//!
//! Negative arguments use parity: `L^(k)` is odd for even `k` and even for odd `k`.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Highest derivative order supported by [`langevin_derivative`].
pub const MAX_DERIVATIVE_ORDER: usize = 12;

/// Branch switch between the power series and the closed forms.
pub const SERIES_SWITCH: f64 = 1.5;

const SERIES_TERMS: usize = 90;
const EXP_TERMS: usize = 400;

/// Series coefficients `a_n` multiplying `x^(2n-1)`, `n = 1..=SERIES_TERMS`.
fn series_coefficients() -> &'static [f64; SERIES_TERMS] {
    static COEFFS: OnceLock<[f64; SERIES_TERMS]> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let mut c = [0.0; SERIES_TERMS];
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut pi_pow = 1.0;
        for (i, ci) in c.iter_mut().enumerate() {
            let n = i + 1;
            pi_pow *= pi2;
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            *ci = sign * 2.0 * zeta_even(2 * n) / pi_pow;
        }
        c
    })
}

/// Riemann zeta at an even integer `s >= 2`, by direct summation with an
/// Euler-Maclaurin tail.
fn zeta_even(s: usize) -> f64 {
    match s {
        2 => return std::f64::consts::PI.powi(2) / 6.0,
        4 => return std::f64::consts::PI.powi(4) / 90.0,
        _ => {}
    }
    let sf = s as f64;
    let n_terms = 40usize;
    let mut sum = 0.0;
    for j in (1..n_terms).rev() {
        sum += (j as f64).powf(-sf);
    }
    let n = n_terms as f64;
    sum + n.powf(1.0 - sf) / (sf - 1.0) + 0.5 * n.powf(-sf) + sf / 12.0 * n.powf(-sf - 1.0)
}

fn falling_factorial(n: usize, k: usize) -> f64 {
    ((n - k + 1)..=n).fold(1.0, |acc, v| acc * v as f64)
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// `a_n * (2n-1)!/(2n-1-k)!` for every supported order `k`, zero where the
/// term is annihilated by differentiation.
fn differentiated_coefficients() -> &'static Vec<[f64; SERIES_TERMS]> {
    static TABLE: OnceLock<Vec<[f64; SERIES_TERMS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let a = series_coefficients();
        (0..=MAX_DERIVATIVE_ORDER)
            .map(|k| {
                let mut row = [0.0; SERIES_TERMS];
                for n in 1..=SERIES_TERMS {
                    let p = 2 * n - 1;
                    if p >= k {
                        row[n - 1] = a[n - 1] * falling_factorial(p, k);
                    }
                }
                row
            })
            .collect()
    })
}

fn series_derivative(x: f64, k: usize) -> f64 {
    let coeffs = &differentiated_coefficients()[k];
    // Terms with 2n - 1 < k vanish after differentiation.
    let first = (k + 2) / 2;
    let x2 = x * x;
    // Horner in x^2 from the highest retained power down.
    let mut acc = 0.0;
    for n in (first..=SERIES_TERMS).rev() {
        acc = acc * x2 + coeffs[n - 1];
    }
    let lead_power = 2 * first - 1 - k;
    acc * x.powi(lead_power as i32)
}

/// `L^(k)(x)` for `x >= SERIES_SWITCH`.
fn closed_form_derivative(x: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0 / x.tanh() - 1.0 / x;
    }
    let mut coth_k = 0.0;
    for n in 1..=EXP_TERMS {
        let two_n = 2.0 * n as f64;
        let term = two_n.powi(k as i32) * (-two_n * x).exp();
        coth_k += term;
        if term < 1e-19 * coth_k.abs() {
            break;
        }
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    coth_k *= 2.0 * sign;
    // d^k/dx^k (1/x) = (-1)^k k! / x^(k+1)
    let inv = sign * factorial(k) / x.powi(k as i32 + 1);
    coth_k - inv
}

fn derivative_unchecked(x: f64, k: usize) -> f64 {
    let ax = x.abs();
    let v = if ax < SERIES_SWITCH {
        series_derivative(ax, k)
    } else {
        closed_form_derivative(ax, k)
    };
    // L^(k) has parity (-1)^(k+1).
    if x < 0.0 && k % 2 == 0 {
        -v
    } else {
        v
    }
}

/// The Langevin function `coth(x) - 1/x`, continuous at zero.
pub fn langevin(x: f64) -> f64 {
    derivative_unchecked(x, 0)
}

/// The `k`-th derivative of the Langevin function, `1 <= k <= MAX_DERIVATIVE_ORDER`.
pub fn langevin_derivative(x: f64, k: usize) -> Result<f64> {
    if k == 0 || k > MAX_DERIVATIVE_ORDER {
        return Err(Error::Range(format!(
            "Langevin derivative order {k} outside 1..={MAX_DERIVATIVE_ORDER}"
        )));
    }
    Ok(derivative_unchecked(x, k))
}

/// Derivative of any order `0..=MAX_DERIVATIVE_ORDER`; order 0 is the function.
pub(crate) fn langevin_order(x: f64, k: usize) -> f64 {
    debug_assert!(k <= MAX_DERIVATIVE_ORDER);
    derivative_unchecked(x, k)
}

/// Series branch, exposed for the branch-overlap checks.
pub fn langevin_series(x: f64, k: usize) -> f64 {
    let v = series_derivative(x.abs(), k);
    if x < 0.0 && k % 2 == 0 {
        -v
    } else {
        v
    }
}

/// Closed-form branch, exposed for the branch-overlap checks. `x` must be nonzero.
pub fn langevin_closed_form(x: f64, k: usize) -> f64 {
    let v = closed_form_derivative(x.abs(), k);
    if x < 0.0 && k % 2 == 0 {
        -v
    } else {
        v
    }
}

/// `L'(w)` for complex `w`, used by the complex-exponential drive model.
///
/// Valid away from the poles `w = i*pi*n`, `n != 0`.
pub fn langevin_prime_complex(w: Complex64) -> Complex64 {
    // L' is even.
    let w = if w.re < 0.0 { -w } else { w };
    if w.norm() < SERIES_SWITCH {
        let coeffs = series_coefficients();
        let w2 = w * w;
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (1..=SERIES_TERMS).rev() {
            acc = acc * w2 + coeffs[n - 1] * (2 * n - 1) as f64;
        }
        acc
    } else {
        // csch^2(w) = 4 e^{-2w} / (1 - e^{-2w})^2, bounded for Re w >= 0.
        let e = (-2.0 * w).exp();
        let one = Complex64::new(1.0, 0.0);
        let csch2 = 4.0 * e / ((one - e) * (one - e));
        one / (w * w) - csch2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 50-digit reference values of `L^(k)(x)` computed with an independent
    /// arbitrary-precision symbolic differentiation.
    const REFERENCE: &[(f64, usize, f64)] = &[
        (2.0, 0, 0.537_314_720_727_548_1),
        (0.05, 0, 0.016_663_889_550_099_248),
        (7.0, 0, 0.857_144_520_201_678_2),
        (0.3, 1, 0.327_417_980_103_336_8),
        (1.7, 1, 0.203_150_725_987_166_03),
        (3.5, 1, 0.077_978_463_859_105_42),
        (0.5, 2, -0.061_641_863_000_100_856),
        (2.0, 2, -0.092_282_873_624_648_19),
        (0.5, 3, -0.104_204_746_188_162_37),
        (1.0, 3, -0.041_838_377_152_995_796),
        (1.7, 3, 0.024_430_980_395_577_463),
        (1.0, 4, 0.126_839_836_135_445_5),
        (3.5, 4, -0.016_087_309_349_941_385),
        (1.7, 5, -0.113_788_019_871_923_43),
        (0.3, 6, -0.286_782_725_099_098_4),
        (2.0, 6, 0.104_199_821_128_350_93),
        (1.0, 7, 0.561_941_818_141_188_3),
        (7.0, 7, 0.000_661_377_279_290_763_5),
        (0.5, 8, 2.393_386_656_807_663_6),
        (1.7, 8, -0.822_776_766_221_917_4),
        (2.0, 8, -0.539_896_242_996_106_7),
        (3.5, 8, 0.066_870_584_220_609_29),
    ];

    #[test]
    fn matches_high_precision_reference() {
        for &(x, k, expected) in REFERENCE {
            for (sx, sign) in [(x, 1.0), (-x, if k % 2 == 0 { -1.0 } else { 1.0 })] {
                let got = langevin_order(sx, k);
                let rel = (got - sign * expected).abs() / expected.abs();
                assert!(rel < 1e-12, "L^({k})({sx}) = {got}, expected {}", sign * expected);
            }
        }
    }

    #[test]
    fn zero_and_small_arguments() {
        assert_eq!(langevin(0.0), 0.0);
        assert!((langevin_derivative(0.0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(langevin_derivative(0.0, 2).unwrap(), 0.0);
        let x: f64 = 1e-6;
        assert!((langevin(x) - (x / 3.0 - x.powi(3) / 45.0)).abs() < 1e-15 * x);
        // L'''(0) = -2/15
        assert!((langevin_derivative(0.0, 3).unwrap() + 2.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn order_bounds() {
        assert!(langevin_derivative(1.0, 0).is_err());
        assert!(langevin_derivative(1.0, MAX_DERIVATIVE_ORDER + 1).is_err());
        assert!(langevin_derivative(1.0, MAX_DERIVATIVE_ORDER).is_ok());
    }

    #[test]
    fn branches_agree_in_overlap() {
        for k in 0..=MAX_DERIVATIVE_ORDER {
            let scale = (0..=200)
                .map(|i| langevin_order(i as f64 * 0.02, k).abs())
                .fold(0.0, f64::max);
            let mut x = 1.2;
            while x <= 1.8 {
                let s = langevin_series(x, k);
                let c = langevin_closed_form(x, k);
                assert!(
                    (s - c).abs() <= 1e-10 * scale.max(c.abs()),
                    "k={k} x={x}: series {s} closed {c}"
                );
                x += 0.01;
            }
        }
    }

    #[test]
    fn complex_derivative_matches_real_on_axis() {
        for &x in &[0.0, 0.4, 1.49, 1.51, 3.0, -2.5, 40.0] {
            let c = langevin_prime_complex(Complex64::new(x, 0.0));
            let r = langevin_order(x, 1);
            assert!((c.re - r).abs() < 1e-13 && c.im.abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn complex_derivative_is_holomorphic() {
        // Cauchy-Riemann via finite differences at a few off-axis points.
        for &(a, b) in &[(0.3, 0.2), (1.4, -0.5), (2.5, 0.9), (-0.7, 0.25)] {
            let w = Complex64::new(a, b);
            let h = 1e-6;
            let dx = (langevin_prime_complex(w + h) - langevin_prime_complex(w - h)) / (2.0 * h);
            let ih = Complex64::new(0.0, h);
            let dy = (langevin_prime_complex(w + ih) - langevin_prime_complex(w - ih)) / (2.0 * h);
            let diff = dx - dy * Complex64::new(0.0, -1.0);
            assert!(diff.norm() < 1e-6, "w={w}: {diff}");
        }
    }
}
