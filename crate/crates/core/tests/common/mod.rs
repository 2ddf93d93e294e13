//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use crp_spectra::special::{ln_factorial, ln_gamma};
use num_complex::Complex64;

/// Closed form of `Cov(Z_{α,j}(s), Z_{α,k}(t))` for `s ≤ t`.
pub fn zj_closed(alpha: f64, j: u64, k: u64, s: f64, t: f64) -> f64 {
    let (jf, kf) = (j as f64, k as f64);
    let joint = if k >= j {
        let lead = if k == j { 1.0 } else { (t - s).powf(kf - jf) };
        alpha * s.powf(jf) * lead
            * (ln_gamma(kf - alpha) - ln_factorial(j) - ln_factorial(k - j) - (kf - alpha) * t.ln()).exp()
    } else {
        0.0
    };
    let product = alpha
        * (jf * s.ln() + kf * t.ln() + ln_gamma(jf + kf - alpha)
            - ln_factorial(j)
            - ln_factorial(k)
            - (jf + kf - alpha) * (s + t).ln())
        .exp();
    joint - product
}

/// `det(I − zM)` for the permutation matrix of `succ` (`M[i][succ[i]] = 1`),
/// by Gaussian elimination with partial pivoting.
pub fn det_elimination(succ: &[usize], z: Complex64) -> Complex64 {
    let n = succ.len();
    let mut a = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        a[i][i] += 1.0;
        a[i][succ[i]] -= z;
    }
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm())).unwrap();
        if a[piv][col].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f.norm() == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
        }
    }
    det
}

/// Cycle lengths of a successor vector, found by walking it.
pub fn walk_cycles(succ: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; succ.len()];
    let mut lens = Vec::new();
    for start in 0..succ.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = succ[i];
            len += 1;
        }
        lens.push(len);
    }
    lens
}

/// Coefficient of `z^k` in `Π_j (1 − z^j)^{x_j}` via `exp(Σ_j x_j log(1 − z^j))`
/// and the power-series exponential recurrence `m b_m = Σ_i i a_i b_{m−i}`.
pub fn product_coeff_by_exp(x: &[f64], k: usize) -> f64 {
    let mut a = vec![0.0; k + 1];
    for (idx, &xj) in x.iter().enumerate() {
        let j = idx + 1;
        let mut m = 1;
        while j * m <= k {
            a[j * m] -= xj / m as f64;
            m += 1;
        }
    }
    let mut b = vec![0.0; k + 1];
    b[0] = 1.0;
    for m in 1..=k {
        let s: f64 = (1..=m).map(|i| i as f64 * a[i] * b[m - i]).sum();
        b[m] = s / m as f64;
    }
    b[k]
}
