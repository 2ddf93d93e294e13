//! Two-sample and goodness-of-fit tests with asymptotic p-values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_SAMPLE: usize = 100;
/// Below this size the asymptotic p-values are flagged as rough.
pub const ASYMPTOTIC_SAMPLE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom for chi-square tests.
    pub df: Option<usize>,
    pub small_sample: bool,
}

/// Kolmogorov tail `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn finite_sorted(x: &[f64], what: &str) -> Result<Vec<f64>> {
    if x.len() < MIN_SAMPLE {
        return Err(Error::InvalidArgument(format!(
            "{what} has {} values, need at least {MIN_SAMPLE}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite values")));
    }
    let mut v = x.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov–Smirnov with `λ = (√nₑ + 0.12 + 0.11/√nₑ) D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let a = finite_sorted(a, "first sample")?;
    let b = finite_sorted(b, "second sample")?;
    if a[0] == a[a.len() - 1] && b[0] == b[b.len() - 1] && a[0] == b[0] {
        return Err(Error::InvalidArgument("both samples are the same constant".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let sq = ne.sqrt();
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d),
        df: None,
        small_sample: a.len().min(b.len()) < ASYMPTOTIC_SAMPLE,
    })
}

/// One-sample KS against `N(mean, var)`.
pub fn ks_vs_normal(x: &[f64], mean: f64, var: f64) -> Result<TestResult> {
    let v = finite_sorted(x, "sample")?;
    if v[0] == v[v.len() - 1] {
        return Err(Error::InvalidArgument("sample is constant".into()));
    }
    let normal = Normal::new(mean, var.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("normal({mean}, {var}): {e}")))?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &xi) in v.iter().enumerate() {
        let f = normal.cdf(xi);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sq = n.sqrt();
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d),
        df: None,
        small_sample: v.len() < ASYMPTOTIC_SAMPLE,
    })
}

/// Two-sample chi-square on binned counts,
/// `Σ (√(B/A) a_i − √(A/B) b_i)² / (a_i + b_i)` over non-empty bins, with
/// `df = bins − 1`.
pub fn chi2_two_sample(a: &[u64], b: &[u64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("bin vectors differ in length".into()));
    }
    let ta: u64 = a.iter().sum();
    let tb: u64 = b.iter().sum();
    if ta == 0 || tb == 0 {
        return Err(Error::InvalidArgument("empty sample in chi-square test".into()));
    }
    let (fa, fb) = (ta as f64, tb as f64);
    let ra = (fb / fa).sqrt();
    let rb = (fa / fb).sqrt();
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        bins += 1;
        let diff = ra * x as f64 - rb * y as f64;
        stat += diff * diff / (x + y) as f64;
    }
    if bins < 2 {
        return Err(Error::InvalidArgument("chi-square needs at least two non-empty bins".into()));
    }
    let df = bins - 1;
    let p = ChiSquared::new(df as f64)
        .map_err(|e| Error::Numerics(format!("chi-square df {df}: {e}")))?
        .sf(stat);
    Ok(TestResult {
        statistic: stat,
        p_value: p,
        df: Some(df),
        small_sample: ta.min(tb) < ASYMPTOTIC_SAMPLE as u64,
    })
}

/// Binned counts of two samples of integer vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    /// Smallest expected count per sample over the final bins.
    pub min_expected: f64,
}

/// Quantile cut points of the pooled values, deduplicated.
fn quantile_cuts(values: &mut Vec<u64>, groups: usize) -> Vec<u64> {
    values.sort_unstable();
    let mut cuts: Vec<u64> = (1..groups)
        .map(|g| values[(g * values.len() / groups).min(values.len() - 1)])
        .collect();
    cuts.dedup();
    cuts
}

/// Bin each coordinate at pooled quantiles (`groups` per coordinate), form the
/// product cells, and pool every cell whose combined count is below
/// `2 * min_count` into one overflow cell (merged with the smallest cell if it
/// is still too small).
pub fn bin_joint(a: &[Vec<u64>], b: &[Vec<u64>], groups: usize, min_count: u64) -> Result<Binned> {
    let dim = a.first().map_or(0, |v| v.len());
    if dim == 0 || a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument("joint samples need a common positive dimension".into()));
    }
    let cuts: Vec<Vec<u64>> = (0..dim)
        .map(|c| {
            let mut vals: Vec<u64> = a.iter().chain(b).map(|v| v[c]).collect();
            quantile_cuts(&mut vals, groups)
        })
        .collect();
    let cell = |v: &Vec<u64>| -> Vec<usize> {
        (0..dim).map(|c| cuts[c].partition_point(|&x| x <= v[c])).collect()
    };
    let mut table: BTreeMap<Vec<usize>, (u64, u64)> = BTreeMap::new();
    for v in a {
        table.entry(cell(v)).or_default().0 += 1;
    }
    for v in b {
        table.entry(cell(v)).or_default().1 += 1;
    }
    let mut kept: Vec<(u64, u64)> = Vec::new();
    let mut overflow = (0u64, 0u64);
    for &(x, y) in table.values() {
        if x + y < 2 * min_count {
            overflow.0 += x;
            overflow.1 += y;
        } else {
            kept.push((x, y));
        }
    }
    if overflow.0 + overflow.1 > 0 {
        if overflow.0 + overflow.1 < 2 * min_count && !kept.is_empty() {
            let idx = (0..kept.len()).min_by_key(|&i| kept[i].0 + kept[i].1).unwrap();
            kept[idx].0 += overflow.0;
            kept[idx].1 += overflow.1;
        } else {
            kept.push(overflow);
        }
    }
    let (ta, tb) = (a.len() as f64, b.len() as f64);
    let total = ta + tb;
    let min_expected = kept
        .iter()
        .map(|&(x, y)| (x + y) as f64 * ta.min(tb) / total)
        .fold(f64::INFINITY, f64::min);
    Ok(Binned {
        a: kept.iter().map(|k| k.0).collect(),
        b: kept.iter().map(|k| k.1).collect(),
        min_expected,
    })
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Sample covariance of paired values.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

/// Standard error of the sample covariance, from the spread of
/// `(x − x̄)(y − ȳ)`.
pub fn covariance_se(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    (mean_var(&prods).1 / n).sqrt()
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let c = covariance(x, y);
    c / (mean_var(x).1 * mean_var(y).1).sqrt()
}
