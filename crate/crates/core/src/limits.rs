//! Covariances of the Gaussian limit processes, by quadrature and by series.
//!
//! All processes are built from a Poisson process `N` evaluated at times `r s`
//! and `r t`, integrated against `α r^{−α−1} dr`. Quadrature runs in
//! `u = ln r` over a window chosen from the known decay at both ends.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::seed::{self, StreamRng};
use crate::special::{c_exp_m1, c_ln_1p, ln_gamma, ln_poisson_pmf};
use crate::spectral::WeightSeq;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be > 0")));
    }
    Ok(())
}

fn check_times(s: f64, t: f64) -> Result<()> {
    if !(s > 0.0 && t > 0.0 && s.is_finite() && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("times ({s}, {t}) must be positive")));
    }
    Ok(())
}

/// `P(Q_α = k) = α Γ(k − α) / (Γ(1 − α) Γ(k + 1))`.
pub fn sibuya_pmf(alpha: f64, k: u64) -> Result<f64> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::InvalidArgument("the Sibuya law lives on k >= 1".into()));
    }
    let kf = k as f64;
    Ok(alpha * (ln_gamma(kf - alpha) - ln_gamma(1.0 - alpha) - ln_gamma(kf + 1.0)).exp())
}

/// `1 − (1 − z)^α`, computed as `−expm1(α log1p(−z))`.
fn sibuya_gen(alpha: f64, z: Complex64) -> Complex64 {
    -c_exp_m1(c_ln_1p(-z) * alpha)
}

/// `E z^{Q_α} = 1 − (1 − z)^α` for `|z| < 1`.
pub fn sibuya_pgf(alpha: f64, z: Complex64) -> Result<Complex64> {
    check_alpha(alpha)?;
    if !(z.norm() < 1.0) {
        return Err(Error::InvalidArgument(format!("|z| = {} must be < 1", z.norm())));
    }
    Ok(sibuya_gen(alpha, z))
}

/// A covariance value with its certified absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovValue {
    pub value: Complex64,
    pub abs_error: f64,
}

/// Finite representation `a_j = c + ã_j` with `ã_j = 0` for `j > J`.
struct Settled {
    limit: Complex64,
    // ã_1..ã_J at index 1..=J, index 0 unused
    excess: Vec<Complex64>,
    sup: f64,
}

fn settle(w: &WeightSeq, eps: f64) -> Result<Settled> {
    let s = w.settle(eps).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "weights {} have no known settling point; tabulate them instead",
            w.label()
        ))
    })?;
    let mut excess = vec![Complex64::new(0.0, 0.0); s.last + 1];
    let mut sup = s.limit.norm();
    for (j, slot) in excess.iter_mut().enumerate().skip(1) {
        let a = w.eval(j);
        sup = sup.max(a.norm());
        *slot = a - s.limit;
    }
    Ok(Settled { limit: s.limit, excess, sup })
}

fn poisson_row(mean: f64, len: usize) -> Vec<f64> {
    (0..len).map(|k| ln_poisson_pmf(k as u64, mean).exp()).collect()
}

/// `Cov(a(N(r s)), b(N(r t)))` for `s ≤ t`, arranged so that no term cancels.
///
/// With `q = P(N ≥ 1)`, `A = Σ ã_j P(N_s = j)`, `B = Σ b̃_k P(N_t = k)` and
/// `B' = Σ b̃_k P(N_t − N_s = k)`:
/// `Cov = c_a c_b q_s p_t(0) + c_a p_s(0)(B − B') + c_b A p_t(0) + (E[ã b̃] − A B)`.
fn poisson_cov(a: &Settled, b: &Settled, r: f64, s: f64, t: f64) -> Complex64 {
    let ja = a.excess.len() - 1;
    let jb = b.excess.len() - 1;
    let ps = poisson_row(r * s, ja + 1);
    let pt = poisson_row(r * t, jb + 1);
    let pd = if t > s { poisson_row(r * (t - s), jb + 1) } else {
        let mut v = vec![0.0; jb + 1];
        v[0] = 1.0;
        v
    };
    let qs = -(-r * s).exp_m1();
    let mut big_a = Complex64::new(0.0, 0.0);
    for j in 1..=ja {
        big_a += a.excess[j] * ps[j];
    }
    let mut big_b = Complex64::new(0.0, 0.0);
    let mut big_bd = Complex64::new(0.0, 0.0);
    for k in 1..=jb {
        big_b += b.excess[k] * pt[k];
        big_bd += b.excess[k] * pd[k];
    }
    let mut joint = Complex64::new(0.0, 0.0);
    for j in 1..=ja.min(jb) {
        let mut inner = Complex64::new(0.0, 0.0);
        for m in 0..=(jb - j) {
            inner += b.excess[j + m] * pd[m];
        }
        joint += a.excess[j] * ps[j] * inner;
    }
    a.limit * b.limit * (qs * pt[0])
        + a.limit * ps[0] * (big_b - big_bd)
        + b.limit * big_a * pt[0]
        + (joint - big_a * big_b)
}

/// `∫₀^∞ Cov(a(N(r s)), b(N(r t))) α r^{−α−1} dr` (bilinear, no conjugation).
///
/// Weights must settle to a constant; the truncation error of that
/// representation is part of the error budget. Real and imaginary parts are
/// integrated separately.
pub fn poisson_weighted_cov(
    alpha: f64,
    a: &WeightSeq,
    b: &WeightSeq,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<CovValue> {
    check_alpha(alpha)?;
    check_tol(tol)?;
    check_times(s, t)?;
    let (first, second, s1, t2) = if s <= t { (a, b, s, t) } else { (b, a, t, s) };
    let g = ln_gamma(1.0 - alpha).exp();
    // Truncating at eps costs at most 4·eps·sup·Γ(1−α)·t^α.
    let rough_a = first.growth().map_or(1.0, |gr| gr.bound).max(1.0);
    let rough_b = second.growth().map_or(1.0, |gr| gr.bound).max(1.0);
    let eps = 0.05 * tol / (4.0 * (rough_a + rough_b) * g * t2.powf(alpha));
    let sa = settle(first, eps)?;
    let sb = settle(second, eps)?;
    let sup = (sa.sup * sb.sup).max(f64::MIN_POSITIVE);
    let jmax = (sa.excess.len().max(sb.excess.len()) - 1) as f64;
    // |Cov| ≤ 2·sup·r·t near zero: the part below u_min is under tol/20.
    let u_min = ((0.05 * tol * (1.0 - alpha)) / (2.0 * sup * t2 * alpha)).ln() / (1.0 - alpha);
    // P(Pois(μ) ≤ J) is negligible once μ ≥ J + 10√(J+1) + 30.
    let mu_max = jmax + 10.0 * (jmax + 1.0).sqrt() + 30.0;
    let u_max = (mu_max / s1).ln();
    let budget = 0.4 * tol;
    let integrand = |u: f64, part: fn(Complex64) -> f64| {
        let r = u.exp();
        part(poisson_cov(&sa, &sb, r, s1, t2)) * alpha * (-alpha * u).exp()
    };
    let re = quad::integrate(|u| integrand(u, |c| c.re), u_min, u_max, budget, 32)?;
    let complex = !(first.is_real() && second.is_real());
    let im = if complex {
        Some(quad::integrate(|u| integrand(u, |c| c.im), u_min, u_max, budget, 32)?)
    } else {
        None
    };
    Ok(CovValue {
        value: Complex64::new(re.value, im.map_or(0.0, |i| i.value)),
        abs_error: re.abs_error + im.map_or(0.0, |i| i.abs_error) + 0.1 * tol,
    })
}

/// `Cov(Z_{α,j}(s), Z_{α,k}(t))`.
pub fn cov_zj(alpha: f64, j: usize, k: usize, s: f64, t: f64, tol: f64) -> Result<f64> {
    if j == 0 || k == 0 {
        return Err(Error::InvalidArgument("cycle lengths start at 1".into()));
    }
    let v = poisson_weighted_cov(alpha, &WeightSeq::indicator(j), &WeightSeq::indicator(k), s, t, tol)?;
    Ok(v.value.re)
}

/// `Cov(Z_α(s), Z_α(t))` for real weights.
pub fn cov_zalpha(alpha: f64, weights: &WeightSeq, s: f64, t: f64, tol: f64) -> Result<f64> {
    if !weights.is_real() {
        return Err(Error::InvalidArgument("Z_alpha takes real weights".into()));
    }
    Ok(poisson_weighted_cov(alpha, weights, weights, s, t, tol)?.value.re)
}

/// `Cov(η_α(z, s), η_α(w, t))` by quadrature.
pub fn cov_eta_quadrature(
    alpha: f64,
    z: Complex64,
    w: Complex64,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<Complex64> {
    let a = WeightSeq::log_one_minus(z)?;
    let b = WeightSeq::log_one_minus(w)?;
    Ok(poisson_weighted_cov(alpha, &a, &b, s, t, tol)?.value)
}

/// `Cov(η_α(z, 1), η_α(w, 1))` from the Sibuya double series
/// `Γ(1−α) Σ_{u,v} (1/uv) [G(z^u w^v) − 2^α (G((z^u+w^v)/2) − G(z^u/2) − G(w^v/2))]`
/// with `G(x) = 1 − (1 − x)^α`.
///
/// Each bracket is bounded by `4|z|^u|w|^v`, so the `(u, v)` ranges stop where
/// the geometric tails fall below `tol`.
pub fn cov_eta_series(alpha: f64, z: Complex64, w: Complex64, tol: f64) -> Result<Complex64> {
    check_alpha(alpha)?;
    check_tol(tol)?;
    let (rz, rw) = (z.norm(), w.norm());
    if !(rz < 1.0 && rw < 1.0) {
        return Err(Error::InvalidArgument("series needs |z|, |w| < 1".into()));
    }
    if rz == 0.0 || rw == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let g = ln_gamma(1.0 - alpha).exp();
    let two = 2f64.powf(alpha);
    // Σ_{u>U} r^u/u ≤ r^{U+1} / ((U+1)(1−r)); Σ_u r^u/u = −ln(1−r)
    let full = |r: f64| -(1.0 - r).ln();
    let cut = |r: f64, other: f64| {
        let mut u = 1usize;
        let mut ru = r;
        while 4.0 * g * ru * r / ((u + 1) as f64 * (1.0 - r)) * full(other) > tol / 4.0 {
            u += 1;
            ru *= r;
        }
        u
    };
    let nu = cut(rz, rw);
    let nv = cut(rw, rz);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut zu = Complex64::new(1.0, 0.0);
    for u in 1..=nu {
        zu *= z;
        let mut wv = Complex64::new(1.0, 0.0);
        let gz = sibuya_gen(alpha, zu * 0.5);
        for v in 1..=nv {
            wv *= w;
            let bracket = sibuya_gen(alpha, zu * wv)
                - (sibuya_gen(alpha, (zu + wv) * 0.5) - gz - sibuya_gen(alpha, wv * 0.5)) * two;
            sum += bracket / (u * v) as f64;
        }
    }
    Ok(sum * g)
}

/// Real covariance block of `(Re X, Im X)` against `(Re Y, Im Y)` from the
/// bilinear `C(X, Y)` and `C(X, Ȳ)`.
pub fn real_block(c_xy: Complex64, c_xybar: Complex64) -> [[f64; 2]; 2] {
    [
        [0.5 * (c_xy + c_xybar).re, 0.5 * (c_xy - c_xybar).im],
        [0.5 * (c_xy + c_xybar).im, 0.5 * (c_xybar - c_xy).re],
    ]
}

/// `Cov` of `(Re η(z,s), Im η(z,s))` against `(Re η(w,t), Im η(w,t))`.
pub fn eta_real_cov(
    alpha: f64,
    z: Complex64,
    w: Complex64,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<[[f64; 2]; 2]> {
    let c = cov_eta_quadrature(alpha, z, w, s, t, tol)?;
    let cbar = cov_eta_quadrature(alpha, z, w.conj(), s, t, tol)?;
    Ok(real_block(c, cbar))
}

/// Symmetric covariance matrix with per-entry error and PSD certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
    pub tol: f64,
    pub min_eigenvalue: f64,
}

impl CovMatrix {
    /// Validates exact symmetry and `λ_min ≥ −10 tol`.
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>, errors: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        let d = labels.len();
        if values.len() != d || values.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("covariance shape does not match labels".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if values[i][j] != values[j][i] {
                    return Err(Error::Numerics(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| values[i][j]);
        let min_eigenvalue = if d == 0 {
            0.0
        } else {
            SymmetricEigen::new(m).eigenvalues.min()
        };
        if min_eigenvalue < -10.0 * tol {
            return Err(Error::Numerics(format!(
                "covariance indefinite: smallest eigenvalue {min_eigenvalue:e} below -10 tol"
            )));
        }
        Ok(Self { labels, values, errors, tol, min_eigenvalue })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect();
        Self {
            labels: self.labels.clone(),
            values: scale(&self.values),
            errors: scale(&self.errors),
            tol: self.tol * factor.abs(),
            min_eigenvalue: self.min_eigenvalue * factor,
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.values[i][j])
    }
}

/// `Cov(Z_α(t_i), Z_α(t_j))` over a time grid.
pub fn cov_zalpha_grid(alpha: f64, weights: &WeightSeq, times: &[f64], tol: f64) -> Result<CovMatrix> {
    if !weights.is_real() {
        return Err(Error::InvalidArgument("Z_alpha takes real weights".into()));
    }
    let d = times.len();
    let mut values = vec![vec![0.0; d]; d];
    let mut errors = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = poisson_weighted_cov(alpha, weights, weights, times[i], times[j], tol)?;
            values[i][j] = v.value.re;
            values[j][i] = v.value.re;
            errors[i][j] = v.abs_error;
            errors[j][i] = v.abs_error;
        }
    }
    let labels = times.iter().map(|t| format!("t={t}")).collect();
    CovMatrix::new(labels, values, errors, tol)
}

/// Gaussian sampler for a covariance matrix via Cholesky.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    lower: DMatrix<f64>,
    jitter: f64,
    rng: StreamRng,
}

/// Cholesky factor with diagonal jitter grown from 0 up to `10 tol`.
pub fn limit_process_sampler(cov: &CovMatrix, seed: u64) -> Result<LimitSampler> {
    let m = cov.matrix();
    let d = cov.dim();
    let mut jitter = 0.0;
    loop {
        let shifted = &m + DMatrix::<f64>::identity(d, d) * jitter;
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok(LimitSampler { lower: ch.l(), jitter, rng: seed::rng_from_seed(seed) });
        }
        jitter = if jitter == 0.0 { cov.tol.max(f64::MIN_POSITIVE) } else { jitter * 2.0 };
        if jitter > 10.0 * cov.tol {
            return Err(Error::Numerics(
                "covariance not factorizable within the jitter budget 10 tol".into(),
            ));
        }
    }
}

impl LimitSampler {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn sample(&mut self) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        (0..d)
            .map(|i| (0..=i).map(|k| self.lower[(i, k)] * z[k]).sum())
            .collect()
    }

    pub fn sample_paths(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample()).collect()
    }
}
