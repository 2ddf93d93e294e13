//! Special functions used by the samplers and the limit-law oracles.

use num_complex::Complex64;
pub use statrs::function::gamma::ln_gamma;

// B_{2k}/(2k)! for k = 1..8.
const BERNOULLI_OVER_FACT: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
];

/// Hurwitz zeta `sum_{m>=0} (q+m)^{-s}` for `s > 1`, `q > 0`.
///
/// Direct summation of the first terms followed by an Euler–Maclaurin tail with
/// eight Bernoulli corrections; the remainder is below `1e-15` relative for
/// `s <= 20`.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    debug_assert!(s > 1.0 && q > 0.0);
    const N: usize = 12;
    let mut sum = 0.0;
    for m in 0..N {
        sum += (q + m as f64).powf(-s);
    }
    let x = q + N as f64;
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // s (s+1) ... (s+2k-2) x^{-s-2k+1}
    let mut rising = s;
    let mut xpow = x.powf(-s - 1.0);
    let x2 = x * x;
    for (k, b) in BERNOULLI_OVER_FACT.iter().enumerate() {
        tail += b * rising * xpow;
        let kk = (2 * k + 2) as f64;
        rising *= (s + kk - 1.0) * (s + kk);
        xpow /= x2;
    }
    sum + tail
}

pub fn zeta(s: f64) -> f64 {
    hurwitz_zeta(s, 1.0)
}

/// `ln Γ(x + d) − ln Γ(x)` for `x > 0`, `x + d > 0`, without cancellation at
/// large `x`.
pub fn ln_gamma_ratio(x: f64, d: f64) -> f64 {
    const SHIFT_TO: f64 = 20.0;
    if x < SHIFT_TO {
        let mut acc = 0.0;
        let mut y = x;
        while y < SHIFT_TO {
            acc += (y + d).ln() - y.ln();
            y += 1.0;
        }
        return ln_gamma_ratio(y, d) - acc;
    }
    // Stirling for both terms, written to avoid the large cancellation.
    let y = x + d;
    let mut r = (x - 0.5) * (d / x).ln_1p() + d * y.ln() - d;
    let (yi, xi) = (1.0 / y, 1.0 / x);
    let (y2, x2) = (yi * yi, xi * xi);
    r += (yi - xi) / 12.0;
    r -= (yi * y2 - xi * x2) / 360.0;
    r += (yi * y2 * y2 - xi * x2 * x2) / 1260.0;
    r -= (yi * y2 * y2 * y2 - xi * x2 * x2 * x2) / 1680.0;
    r
}

/// `ln k!` via `ln Γ(k+1)`.
#[inline]
pub fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        0.0
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

/// `ln P(Pois(mean) = k)`; `mean = 0` gives the point mass at zero.
#[inline]
pub fn ln_poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mean.ln() - mean - ln_factorial(k)
}

#[inline]
pub fn poisson_pmf(k: u64, mean: f64) -> f64 {
    ln_poisson_pmf(k, mean).exp()
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Generalized binomial coefficient `x (x-1) ... (x-m+1) / m!`.
pub fn gen_binomial(x: f64, m: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..m {
        c *= (x - i as f64) / (i as f64 + 1.0);
    }
    c
}

/// Principal `ln(1 + z)`, accurate for small `|z|`.
pub fn c_ln_1p(z: Complex64) -> Complex64 {
    let re = 0.5 * (2.0 * z.re + z.norm_sqr()).ln_1p();
    let im = z.im.atan2(1.0 + z.re);
    Complex64::new(re, im)
}

/// `exp(z) − 1`, accurate for small `|z|`.
pub fn c_exp_m1(z: Complex64) -> Complex64 {
    let em1 = z.re.exp_m1();
    let s = (0.5 * z.im).sin();
    let cos_m1 = -2.0 * s * s;
    Complex64::new(em1 * z.im.cos() + cos_m1, z.re.exp() * z.im.sin())
}

/// Principal `ln(1 − z)`; the caller guarantees `z != 1`.
#[inline]
pub fn ln_one_minus(z: Complex64) -> Complex64 {
    c_ln_1p(-z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0) - PI * PI / 6.0).abs() < 1e-15);
        assert!((zeta(4.0) - PI.powi(4) / 90.0).abs() < 1e-15);
        // zeta(1.25) = 4.595.. (tabulated 4.5951118258...)
        assert!((zeta(1.25) - 4.595_111_825_842_94).abs() < 1e-11);
    }

    #[test]
    fn hurwitz_matches_direct_difference() {
        let s = 2.0;
        let direct: f64 = (1..=50).map(|m| (m as f64).powf(-s)).sum();
        assert!((zeta(s) - direct - hurwitz_zeta(s, 51.0)).abs() < 1e-15);
    }

    #[test]
    fn gamma_ratio_agrees_with_lgamma_where_safe() {
        for &x in &[0.3, 1.0, 7.5, 19.9, 20.0, 55.0, 400.0] {
            for &d in &[0.5, 1.0, 2.3, -0.2] {
                let want = ln_gamma(x + d) - ln_gamma(x);
                let got = ln_gamma_ratio(x, d);
                assert!((want - got).abs() < 1e-12, "x={x} d={d} {want} {got}");
            }
        }
    }

    #[test]
    fn gamma_ratio_large_argument() {
        // Γ(x+1)/Γ(x) = x exactly.
        let x = 1.0e12;
        assert!((ln_gamma_ratio(x, 1.0) - x.ln()).abs() < 1e-13);
    }

    #[test]
    fn complex_helpers() {
        let z = Complex64::new(1e-9, -2e-9);
        let l = c_ln_1p(z);
        assert!((l - z).norm() < 1e-17);
        let e = c_exp_m1(z);
        assert!((e - z).norm() < 1e-17);
        let w = Complex64::new(0.3, 0.4);
        assert!((c_ln_1p(w) - (Complex64::new(1.0, 0.0) + w).ln()).norm() < 1e-15);
        assert!((c_exp_m1(w) - (w.exp() - 1.0)).norm() < 1e-15);
    }

    #[test]
    fn generalized_binomial() {
        assert_eq!(gen_binomial(5.0, 2), 10.0);
        assert!((gen_binomial(2.5, 2) - 1.875).abs() < 1e-15);
        assert!((gen_binomial(-1.0, 3) + 1.0).abs() < 1e-15);
    }
}
