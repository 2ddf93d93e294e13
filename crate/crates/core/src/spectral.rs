//! Statistics of permutation matrices that depend only on cycle counts.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crp::CycleCounts;
use crate::error::{Error, Result};
use crate::quad;
use crate::seed;
use crate::special::{gen_binomial, ln_gamma_ratio, ln_one_minus};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Certificate `|a_j| ≤ C j^β` and `|a_{i+j} − a_i| ≤ C j^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub bound: f64,
    pub exponent: f64,
}

/// Point past which a sequence is constant up to `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settled {
    pub last: usize,
    pub limit: Complex64,
}

#[derive(Clone)]
enum Rule {
    Const(Complex64),
    Indicator(usize),
    Arc { c1: f64, c2: f64 },
    LogOneMinus(Complex64),
    Table { values: Vec<Complex64>, beyond: Complex64 },
    Custom(Arc<dyn Fn(usize) -> Complex64 + Send + Sync>),
}

/// A weight sequence `a_1, a_2, ...` with `a_0 = 0`.
#[derive(Clone)]
pub struct WeightSeq {
    rule: Rule,
    growth: Option<Growth>,
    label: String,
}

impl fmt::Debug for WeightSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightSeq")
            .field("label", &self.label)
            .field("growth", &self.growth)
            .finish()
    }
}

/// Integrality guard for `j c` when counting grid points in an arc.
const GRID_EPS: f64 = 1e-9;

fn ceil_guarded(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= GRID_EPS * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

impl WeightSeq {
    /// `a_j = c` for every `j ≥ 1`.
    pub fn constant(c: f64) -> Self {
        Self {
            rule: Rule::Const(Complex64::new(c, 0.0)),
            growth: Some(Growth { bound: c.abs(), exponent: 0.0 }),
            label: format!("const:{c}"),
        }
    }

    /// `a_j = 1{j = k}`.
    pub fn indicator(k: usize) -> Self {
        Self {
            rule: Rule::Indicator(k),
            growth: Some(Growth { bound: 1.0, exponent: 0.0 }),
            label: format!("indicator:{k}"),
        }
    }

    /// Riemann-sum weights of the arc indicator `1{x ∈ [c1, c2)}`.
    pub fn arc(c1: f64, c2: f64) -> Result<Self> {
        if !(0.0 <= c1 && c1 < c2 && c2 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "arc endpoints need 0 <= c1 < c2 <= 1, got ({c1}, {c2})"
            )));
        }
        Ok(Self {
            rule: Rule::Arc { c1, c2 },
            growth: Some(Growth { bound: 1.0, exponent: 0.0 }),
            label: format!("arc:{c1}:{c2}"),
        })
    }

    /// `a_j = log(1 − z^j)` (principal branch), for `|z| < 1`.
    pub fn log_one_minus(z: Complex64) -> Result<Self> {
        if !(z.norm() < 1.0) {
            return Err(Error::InvalidArgument(format!("|z| = {} must be < 1", z.norm())));
        }
        let r = z.norm();
        Ok(Self {
            rule: Rule::LogOneMinus(z),
            growth: Some(Growth { bound: -(1.0 - r).ln() + r / (1.0 - r), exponent: 0.0 }),
            label: format!("logz:{}:{}", z.re, z.im),
        })
    }

    /// `a_j = values[j−1]` for `j ≤ len`, `beyond` afterwards.
    pub fn table(values: Vec<Complex64>, beyond: Complex64) -> Self {
        let sup = values.iter().map(|v| v.norm()).fold(beyond.norm(), f64::max);
        let label = format!("table:{}", values.len());
        Self {
            rule: Rule::Table { values, beyond },
            growth: Some(Growth { bound: 2.0 * sup, exponent: 0.0 }),
            label,
        }
    }

    pub fn custom<F>(f: F, growth: Option<Growth>, label: &str) -> Self
    where
        F: Fn(usize) -> Complex64 + Send + Sync + 'static,
    {
        Self { rule: Rule::Custom(Arc::new(f)), growth, label: label.to_string() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn growth(&self) -> Option<Growth> {
        self.growth
    }

    /// Certified growth exponent below `α²/2`.
    pub fn admissible_for(&self, alpha: f64) -> bool {
        self.growth.is_some_and(|g| g.exponent < alpha * alpha / 2.0)
    }

    pub fn eval(&self, j: usize) -> Complex64 {
        if j == 0 {
            return ZERO;
        }
        match &self.rule {
            Rule::Const(c) => *c,
            Rule::Indicator(k) => {
                if j == *k {
                    Complex64::new(1.0, 0.0)
                } else {
                    ZERO
                }
            }
            Rule::Arc { c1, c2 } => Complex64::new(arc_weight(*c1, *c2, j), 0.0),
            Rule::LogOneMinus(z) => ln_one_minus(z.powi(j as i32)),
            Rule::Table { values, beyond } => values.get(j - 1).copied().unwrap_or(*beyond),
            Rule::Custom(f) => f(j),
        }
    }

    pub fn is_real(&self) -> bool {
        match &self.rule {
            Rule::Const(c) => c.im == 0.0,
            Rule::Indicator(_) | Rule::Arc { .. } => true,
            Rule::LogOneMinus(z) => z.im == 0.0,
            Rule::Table { values, beyond } => beyond.im == 0.0 && values.iter().all(|v| v.im == 0.0),
            Rule::Custom(_) => false,
        }
    }

    /// Complex-conjugate sequence.
    pub fn conj(&self) -> Self {
        let rule = match &self.rule {
            Rule::Const(c) => Rule::Const(c.conj()),
            Rule::Indicator(k) => Rule::Indicator(*k),
            Rule::Arc { c1, c2 } => Rule::Arc { c1: *c1, c2: *c2 },
            Rule::LogOneMinus(z) => Rule::LogOneMinus(z.conj()),
            Rule::Table { values, beyond } => Rule::Table {
                values: values.iter().map(|v| v.conj()).collect(),
                beyond: beyond.conj(),
            },
            Rule::Custom(f) => {
                let f = Arc::clone(f);
                Rule::Custom(Arc::new(move |j| f(j).conj()))
            }
        };
        Self { rule, growth: self.growth, label: format!("conj({})", self.label) }
    }

    /// `(J, c)` with `|a_j − c| ≤ eps` for all `j > J`, when known.
    pub fn settle(&self, eps: f64) -> Option<Settled> {
        match &self.rule {
            Rule::Const(c) => Some(Settled { last: 0, limit: *c }),
            Rule::Indicator(k) => Some(Settled { last: *k, limit: ZERO }),
            Rule::Table { values, beyond } => Some(Settled { last: values.len(), limit: *beyond }),
            Rule::LogOneMinus(z) => {
                // |log(1 − x)| ≤ |x| / (1 − |x|)
                let r = z.norm();
                if r == 0.0 {
                    return Some(Settled { last: 0, limit: ZERO });
                }
                let mut j = 1usize;
                let mut rj = r;
                while rj / (1.0 - rj) > eps {
                    j += 1;
                    rj *= r;
                }
                Some(Settled { last: j - 1, limit: ZERO })
            }
            Rule::Arc { .. } | Rule::Custom(_) => None,
        }
    }
}

/// `#{k < j : k/j ∈ [c1, c2)} − j(c2 − c1)`.
fn arc_weight(c1: f64, c2: f64, j: usize) -> f64 {
    let jf = j as f64;
    let count = ceil_guarded(jf * c2) - ceil_guarded(jf * c1);
    count - jf * (c2 - c1)
}

pub fn weights_from_arc(c1: f64, c2: f64) -> Result<WeightSeq> {
    WeightSeq::arc(c1, c2)
}

/// `a_j(f) = Σ_{k<j} f(k/j) − j ∫₀¹ f`. When `integral` is `None` it is
/// computed by adaptive quadrature to `1e-12`.
pub fn weights_from_function<F: Fn(f64) -> f64>(f: F, integral: Option<f64>, j: usize) -> Result<f64> {
    if j == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 0..j {
        let v = f(k as f64 / j as f64);
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("f({k}/{j}) = {v} is not finite")));
        }
        sum += v;
    }
    let int = match integral {
        Some(v) => v,
        None => quad::integrate(&f, 0.0, 1.0, 1e-12, 32)?.value,
    };
    Ok(sum - j as f64 * int)
}

/// `Σ_j a_j C_j` over nonzero counts.
pub fn weighted_sum(counts: &CycleCounts, weights: &WeightSeq) -> Complex64 {
    counts.iter().map(|(j, c)| weights.eval(j) * c as f64).sum()
}

/// Which side of the unit circle `z` lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Inside,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexPoint {
    z: Complex64,
    region: Region,
}

impl ComplexPoint {
    pub fn new(z: Complex64) -> Result<Self> {
        let r = z.norm();
        if !r.is_finite() {
            return Err(Error::InvalidArgument(format!("z = {z} is not finite")));
        }
        let region = if r < 1.0 {
            Region::Inside
        } else if r > 1.0 {
            Region::Outside
        } else {
            return Err(Error::InvalidArgument(format!("z = {z} lies on the unit circle")));
        };
        Ok(Self { z, region })
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn region(&self) -> Region {
        self.region
    }
}

/// `log det(I − zM)` from cycle counts.
///
/// Inside the disc: `Σ_j C_j log(1 − z^j)`. Outside: `n log z + Σ_j C_j log(z^{−j} − 1)`,
/// where `n log z` is the drift term. Both use principal logarithms, so the
/// result matches the determinant up to a multiple of `2πi`.
pub fn log_char_poly(counts: &CycleCounts, point: &ComplexPoint) -> Complex64 {
    let z = point.z;
    match point.region {
        Region::Inside => counts
            .iter()
            .map(|(j, c)| ln_one_minus(z.powi(j as i32)) * c as f64)
            .sum(),
        Region::Outside => {
            let w = z.inv();
            let n = counts.size() as f64;
            let body: Complex64 = counts
                .iter()
                .map(|(j, c)| (w.powi(j as i32) - 1.0).ln() * c as f64)
                .sum();
            z.ln() * n + body
        }
    }
}

/// `−(1/n) Σ_j C_j log|z^j − 1|`.
pub fn log_potential(counts: &CycleCounts, z: Complex64) -> Result<f64> {
    let n = counts.size();
    if n == 0 {
        return Err(Error::InvalidArgument("empty cycle counts".into()));
    }
    let r = z.norm();
    let mut acc = 0.0;
    for (j, c) in counts.iter() {
        let lg = if r > 1.0 {
            // log|z^j| + log|1 − z^{−j}|
            j as f64 * r.ln() + ln_one_minus(z.inv().powi(j as i32)).re
        } else {
            ln_one_minus(z.powi(j as i32)).re
        };
        if !lg.is_finite() || (z.powi(j as i32) - 1.0).norm() < 1e-14 {
            return Err(Error::Numerics(format!(
                "z = {z} is a {j}-th root of unity: the potential is singular"
            )));
        }
        acc += c as f64 * lg;
    }
    Ok(-acc / n as f64)
}

/// Pointwise limit of the potential: `−log|z|` outside the disc, `0` inside.
pub fn log_potential_limit(z: Complex64) -> f64 {
    let r = z.norm();
    if r >= 1.0 {
        -r.ln()
    } else {
        0.0
    }
}

/// Multiplicity of `e^{2πip/n}`: `Σ_{j : n | pj} C_j`.
pub fn eigenvalue_multiplicity(counts: &CycleCounts, p: usize, n: usize) -> Result<u64> {
    if p >= n {
        return Err(Error::InvalidArgument(format!("p = {p} must lie in [0, {n})")));
    }
    Ok(counts
        .iter()
        .filter(|&(j, _)| (p as u128 * j as u128) % n as u128 == 0)
        .map(|(_, c)| c)
        .sum())
}

/// Coefficients `0..=K` of `Π_j (1 − z^j)^{c_j}`. Factors with `j > K` are skipped.
pub fn secular_coeffs(exponents: &[f64], order: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; order + 1];
    coeffs[0] = 1.0;
    for (idx, &c) in exponents.iter().enumerate().take(order) {
        let j = idx + 1;
        if c == 0.0 {
            continue;
        }
        let terms: Vec<f64> = (0..=order / j)
            .map(|m| if m % 2 == 0 { 1.0 } else { -1.0 } * gen_binomial(c, m))
            .collect();
        let mut next = vec![0.0; order + 1];
        for (i, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (m, t) in terms.iter().enumerate() {
                let shift = j * m;
                if shift > i {
                    break;
                }
                acc += t * coeffs[i - shift];
            }
            *slot = acc;
        }
        coeffs = next;
    }
    coeffs
}

/// `Σ_{Σ j m_j = k} Π_j (−1)^{m_j} binom(x_j, m_j)` with `k = x.len()`.
pub fn pk_polynomial(x: &[f64]) -> f64 {
    fn go(x: &[f64], j: usize, remaining: usize) -> f64 {
        if remaining == 0 {
            return 1.0;
        }
        if j > remaining {
            return 0.0;
        }
        let mut total = 0.0;
        let mut m = 0;
        while j * m <= remaining {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let w = sign * gen_binomial(x[j - 1], m);
            if w != 0.0 {
                total += w * go(x, j + 1, remaining - j * m);
            }
            m += 1;
        }
        total
    }
    go(x, 1, x.len())
}

/// One draw of the Feller coupling at several sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FellerDraw {
    pub sizes: Vec<usize>,
    /// `Ĉ_{n,·}` for each requested size.
    pub coupled: Vec<CycleCounts>,
    /// `W_1, ..., W_m`.
    pub limit: Vec<u64>,
    pub horizon: u64,
}

/// Target for the expected number of spacings missed past the horizon.
pub const FELLER_TAIL: f64 = 1e-6;

/// Next success after position `i`: the smallest `k > i` with
/// `R(k) > R(i) − ln U`, where `R(x) = ln Γ(x + θ) − ln Γ(x)` and
/// `exp(R(i) − R(k))` is the probability of no success in `(i, k]`.
fn next_success<Rn: Rng + ?Sized>(theta: f64, i: u64, rng: &mut Rn) -> u64 {
    let r = |x: u64| ln_gamma_ratio(x as f64, theta);
    let target = r(i) - (1.0 - rng.random::<f64>()).ln();
    let mut lo = i;
    let mut step = 1u64;
    let mut hi = i + 1;
    while r(hi) <= target {
        lo = hi;
        step = step.saturating_mul(2);
        hi = hi.saturating_add(step);
        if hi == u64::MAX {
            return u64::MAX;
        }
    }
    // r(lo) <= target < r(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if r(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Feller coupling for the `(0, θ)` model.
///
/// Successes `ξ_i ~ Bernoulli(θ/(θ+i−1))` are generated by jumping between
/// success positions. `Ĉ_{n,j}` counts spacings of length `j` between successes
/// in `1..=n+1`, with a virtual success at `n+1`. `W_j` counts spacings of
/// length `j ≤ m` starting at or before the horizon `H = ⌈m θ² / FELLER_TAIL⌉`
/// (at least the largest `n`), beyond which the expected number of such
/// spacings is below `FELLER_TAIL`.
pub fn feller_coupling(theta: f64, sizes: &[usize], m: usize, seed: u64) -> Result<FellerDraw> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParams(format!("theta = {theta} must be > 0")));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument("sizes must be non-empty and positive".into()));
    }
    let mut rng = seed::rng_from_seed(seed);
    let n_max = *sizes.iter().max().unwrap() as u64;
    let horizon = ((m as f64 * theta * theta / FELLER_TAIL).ceil() as u64).max(n_max);
    // ξ_1 = 1 since θ/θ = 1
    let mut positions = vec![1u64];
    loop {
        let last = *positions.last().unwrap();
        if last > horizon {
            break;
        }
        positions.push(next_success(theta, last, &mut rng));
    }
    let mut limit = vec![0u64; m];
    for w in positions.windows(2) {
        if w[0] > horizon {
            break;
        }
        let d = w[1] - w[0];
        if d >= 1 && (d as usize) <= m {
            limit[d as usize - 1] += 1;
        }
    }
    let coupled = sizes
        .iter()
        .map(|&n| {
            let n = n as u64;
            let mut spacings: Vec<(usize, u64)> = Vec::new();
            let mut prev = 1u64;
            for &p in positions.iter().skip(1) {
                if p > n {
                    break;
                }
                spacings.push(((p - prev) as usize, 1));
                prev = p;
            }
            spacings.push(((n + 1 - prev) as usize, 1));
            CycleCounts::from_pairs(spacings)
        })
        .collect();
    Ok(FellerDraw { sizes: sizes.to_vec(), coupled, limit, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn arc_weights() {
        let w = WeightSeq::arc(0.0, 0.5).unwrap();
        assert_eq!(w.eval(3).re, 0.5);
        for j in (2..40).step_by(2) {
            assert_eq!(w.eval(j).re, 0.0);
        }
        let w = WeightSeq::arc(0.0, 0.5f64.sqrt()).unwrap();
        for j in 1..500 {
            assert!(w.eval(j).re.abs() <= 1.0);
        }
        assert!(WeightSeq::arc(0.5, 0.5).is_err());
        for j in 1..40 {
            let f = weights_from_function(
                |x| if (0.2..0.7).contains(&x) { 1.0 } else { 0.0 },
                Some(0.5),
                j,
            )
            .unwrap();
            assert!((f - WeightSeq::arc(0.2, 0.7).unwrap().eval(j).re).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn function_weights() {
        assert_eq!(weights_from_function(|_| 1.0, None, 7).unwrap().abs() < 1e-12, true);
        assert!((weights_from_function(|x| x, None, 2).unwrap() + 0.5).abs() < 1e-12);
        assert!(weights_from_function(|_| f64::NAN, Some(0.0), 2).is_err());
    }

    #[test]
    fn weighted_sums() {
        let counts = CycleCounts::from_pairs(vec![(1, 2), (2, 1)]);
        assert_eq!(weighted_sum(&counts, &WeightSeq::constant(1.0)).re, 3.0);
        let id = WeightSeq::custom(|j| c(j as f64, 0.0), None, "j");
        assert_eq!(weighted_sum(&counts, &id).re, 4.0);
        let sq = WeightSeq::custom(|j| c((j * j) as f64, 0.0), None, "j^2");
        assert_eq!(weighted_sum(&counts, &sq).re, 6.0);
    }

    #[test]
    fn char_poly_examples() {
        let p = ComplexPoint::new(c(0.5, 0.0)).unwrap();
        let four = CycleCounts::from_pairs(vec![(4, 1)]);
        assert!((log_char_poly(&four, &p).re - (1.0f64 - 0.0625).ln()).abs() < 1e-15);
        let zero = ComplexPoint::new(c(0.0, 0.0)).unwrap();
        assert_eq!(log_char_poly(&four, &zero), ZERO);
        let id = CycleCounts::from_pairs(vec![(1, 10)]);
        assert!((log_char_poly(&id, &p).re + 10.0 * 2f64.ln()).abs() < 1e-13);
        assert!(ComplexPoint::new(c(0.6, 0.8)).is_err());
        // outside: det(I − zM) for a 3-cycle is 1 − z³
        let z = c(1.5, 0.7);
        let three = CycleCounts::from_pairs(vec![(3, 1)]);
        let got = log_char_poly(&three, &ComplexPoint::new(z).unwrap()).exp();
        let want = 1.0 - z.powi(3);
        assert!((got - want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn potential_examples() {
        let id = CycleCounts::from_pairs(vec![(1, 1)]);
        assert!(log_potential(&id, c(2.0, 0.0)).unwrap().abs() < 1e-15);
        assert!((log_potential(&id, c(3.0, 0.0)).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!(log_potential(&id, c(1.0, 0.0)).is_err());
        assert_eq!(log_potential_limit(c(0.5, 0.0)), 0.0);
        assert!((log_potential_limit(c(0.0, 2.0)) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn multiplicities() {
        let id = CycleCounts::from_pairs(vec![(1, 5)]);
        assert_eq!(eigenvalue_multiplicity(&id, 0, 5).unwrap(), 5);
        let two_threes = CycleCounts::from_pairs(vec![(3, 2)]);
        assert_eq!(eigenvalue_multiplicity(&two_threes, 2, 6).unwrap(), 2);
        let cyc = CycleCounts::from_pairs(vec![(7, 1)]);
        for p in 0..7 {
            assert_eq!(eigenvalue_multiplicity(&cyc, p, 7).unwrap(), 1);
        }
        assert!(eigenvalue_multiplicity(&cyc, 7, 7).is_err());
    }

    #[test]
    fn secular_examples() {
        assert_eq!(secular_coeffs(&[0.0, 0.0], 3), vec![1.0, 0.0, 0.0, 0.0]);
        assert!((secular_coeffs(&[1.7], 1)[1] + 1.7).abs() < 1e-15);
        assert!((secular_coeffs(&[2.5, 1.0], 2)[2] - 0.875).abs() < 1e-15);
        assert!((pk_polynomial(&[1.3]) + 1.3).abs() < 1e-15);
        assert!((pk_polynomial(&[2.5, 1.0]) - 0.875).abs() < 1e-15);
        assert!(pk_polynomial(&[2.0, 1.0]).abs() < 1e-15);
    }

    #[test]
    fn log_weights_settle() {
        let w = WeightSeq::log_one_minus(c(0.5, 0.0)).unwrap();
        let s = w.settle(1e-12).unwrap();
        for j in s.last + 1..s.last + 50 {
            assert!(w.eval(j).norm() <= 1e-12);
        }
        assert!(WeightSeq::log_one_minus(c(1.0, 0.0)).is_err());
        assert!(WeightSeq::arc(0.1, 0.3).unwrap().settle(1e-9).is_none());
    }

    #[test]
    fn feller_basics() {
        for seed in 0..50 {
            let d = feller_coupling(1.0, &[10, 100], 3, seed).unwrap();
            assert_eq!(d.coupled[0].size(), 10);
            assert_eq!(d.coupled[1].size(), 100);
        }
        assert!(feller_coupling(0.0, &[10], 3, 1).is_err());
    }

    #[test]
    fn next_success_matches_bernoulli_rate() {
        // P(next success after 1 is at 2) = θ/(θ+1)
        let theta = 0.5;
        let mut rng = seed::rng_from_seed(1);
        let trials = 100_000;
        let hits = (0..trials).filter(|_| next_success(theta, 1, &mut rng) == 2).count();
        let p = hits as f64 / trials as f64;
        let want = theta / (theta + 1.0);
        assert!((p - want).abs() < 4.0 * (want * (1.0 - want) / trials as f64).sqrt());
    }
}
