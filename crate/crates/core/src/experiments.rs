//! Monte Carlo experiments that confront simulations with the limit oracles.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]. Replica
//! `r` draws from streams derived from `(seed, r)`, replicas run on the rayon
//! pool, and all reductions happen afterwards in replica order, so a report
//! does not depend on the number of threads.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crp::{block_count_mean, simulate_crp, Checkpoints, CycleCounts, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::limits::{cov_zalpha_grid, cov_zj, eta_real_cov, limit_process_sampler};
use crate::seed::derive_seed;
use crate::special::ln_gamma;
use crate::spectral::{feller_coupling, weighted_sum, ComplexPoint, Region, WeightSeq};
use crate::stats::{
    bin_joint, chi2_two_sample, correlation, covariance, covariance_se, ks_two_sample, mean_var,
};
use crate::urn::{
    estimate_c0, expected_occupied, sample_urn_split, weighted_occupancy_mean, FrequencySource,
};

pub const MIN_REPLICAS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clt,
    Kingman,
    Feller,
    Charpoly,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Clt => "clt",
            ExperimentKind::Kingman => "kingman",
            ExperimentKind::Feller => "feller",
            ExperimentKind::Charpoly => "charpoly",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clt" => Ok(Self::Clt),
            "kingman" => Ok(Self::Kingman),
            "feller" => Ok(Self::Feller),
            "charpoly" => Ok(Self::Charpoly),
            _ => Err(Error::InvalidArgument(format!(
                "unknown experiment '{s}' (expected clt, kingman, feller or charpoly)"
            ))),
        }
    }
}

/// Frequency model for the conditional experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceSpec {
    /// `P_j = j^{−1/α}/ζ(1/α)`.
    PowerLaw,
    /// GEM(α, θ) sticks drawn from `seed`. `frozen = false` means a fresh
    /// source per replica.
    StickBreaking { seed: u64, frozen: bool, max_depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightSpec {
    Const { value: f64 },
    Arc { c1: f64, c2: f64 },
    /// `a_j = log(1 − z^j)`.
    LogZ { re: f64, im: f64 },
    /// Explicit `a_1..a_J`, then `beyond`.
    Table { values: Vec<f64>, beyond: f64 },
}

impl WeightSpec {
    pub fn build(&self) -> Result<WeightSeq> {
        match self {
            WeightSpec::Const { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidArgument(format!("constant weight {value}")));
                }
                Ok(WeightSeq::constant(*value))
            }
            WeightSpec::Arc { c1, c2 } => WeightSeq::arc(*c1, *c2),
            WeightSpec::LogZ { re, im } => WeightSeq::log_one_minus(Complex64::new(*re, *im)),
            WeightSpec::Table { values, beyond } => {
                if values.iter().chain(std::iter::once(beyond)).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("weight table has non-finite values".into()));
                }
                Ok(WeightSeq::table(
                    values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
                    Complex64::new(*beyond, 0.0),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    Analytic,
    Empirical,
}

/// Acceptance thresholds, all recorded in the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Per-test significance level before the Bonferroni correction.
    pub p_min: f64,
    /// Relative tolerance on covariance entries.
    pub cov_rel: f64,
    /// Relative tolerance on the variance at `t = 1`, on top of `se_mult` SE.
    pub var_rel: f64,
    pub corr_abs: f64,
    pub se_mult: f64,
    pub mean_se: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { p_min: 1e-3, cov_rel: 0.10, var_rel: 0.05, corr_abs: 0.05, se_mult: 3.0, mean_se: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub alpha: f64,
    pub theta: f64,
    pub source: SourceSpec,
    pub n: usize,
    pub replicas: usize,
    pub checkpoints: Vec<f64>,
    pub weights: WeightSpec,
    /// Points `z` inside the unit disc for the characteristic polynomial.
    pub z_points: Vec<[f64; 2]>,
    /// Points `z` for the zoom-in `log χ(z / n^{α/2})`.
    pub zoom_points: Vec<[f64; 2]>,
    pub centering: Centering,
    pub seed: u64,
    pub tol: f64,
    pub thresholds: Thresholds,
    /// Explicit stick depth of the per-replica urns in the equivalence test.
    pub kingman_depth: Option<usize>,
    /// Sizes for the coupling-distance check.
    pub feller_sizes: Vec<usize>,
    /// Size `n` of the convergent-series check, compared with `2n`.
    pub series_n: usize,
    pub series_replicas: usize,
}

impl ExperimentConfig {
    /// Defaults matching the desk-scale verification runs.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            alpha: 0.5,
            theta: 0.0,
            source: SourceSpec::PowerLaw,
            n: 1_000_000,
            replicas: 10_000,
            checkpoints: vec![1.0],
            weights: WeightSpec::Const { value: 1.0 },
            z_points: Vec::new(),
            zoom_points: Vec::new(),
            centering: Centering::Analytic,
            seed: 1,
            tol: 1e-6,
            thresholds: Thresholds::default(),
            kingman_depth: None,
            feller_sizes: Vec::new(),
            series_n: 0,
            series_replicas: 0,
        };
        match kind {
            ExperimentKind::Clt => Self { checkpoints: vec![0.25, 0.5, 1.0], ..base },
            ExperimentKind::Kingman => Self { theta: 0.5, n: 10_000, replicas: 100_000, ..base },
            ExperimentKind::Feller => Self {
                alpha: 0.0,
                theta: 1.0,
                n: 1000,
                replicas: 200_000,
                feller_sizes: vec![1000, 10_000, 100_000],
                series_n: 10_000,
                series_replicas: 20_000,
                ..base
            },
            ExperimentKind::Charpoly => Self {
                z_points: vec![[0.5, 0.0]],
                zoom_points: vec![[1.0, 0.0]],
                ..base
            },
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.alpha, self.theta)
    }

    /// Checks the invariants shared by all experiments.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.replicas < MIN_REPLICAS {
            return Err(Error::InvalidArgument(format!(
                "replicas = {} below the minimum {MIN_REPLICAS}",
                self.replicas
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        Checkpoints::new(self.checkpoints.clone())?;
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be > 0", self.tol)));
        }
        let t = &self.thresholds;
        if !(t.p_min > 0.0 && t.p_min < 1.0) {
            return Err(Error::InvalidArgument(format!("p_min = {} must lie in (0, 1)", t.p_min)));
        }
        if [t.cov_rel, t.var_rel, t.corr_abs, t.se_mult, t.mean_se].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("thresholds must be non-negative".into()));
        }
        let unfrozen = matches!(self.source, SourceSpec::StickBreaking { frozen: false, .. });
        let conditional = matches!(self.kind, ExperimentKind::Clt | ExperimentKind::Charpoly);
        if conditional && unfrozen {
            let why = match self.centering {
                Centering::Analytic => "analytic centering requires a frozen frequency source",
                Centering::Empirical => "the conditional limit law requires a frozen frequency source",
            };
            return Err(Error::InvalidArgument(why.into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// Passes when `|observed − expected| ≤ threshold`.
    Tolerance,
    /// Passes when the p-value exceeds the Bonferroni-corrected threshold.
    PValue,
    /// Passes on exact equality.
    Exact,
    /// Informational unless it carries `pass = false`.
    Diagnostic,
}

/// One test. `tolerance_or_p` is the observed deviation for tolerance and
/// exact records and the p-value for p-value records; `threshold` is the
/// acceptance bound it is compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub statistic: String,
    pub kind: RecordKind,
    pub observed: f64,
    pub expected: f64,
    pub std_error: Option<f64>,
    pub tolerance_or_p: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Record {
    pub fn tolerance(statistic: impl Into<String>, observed: f64, expected: f64, allowed: f64, std_error: Option<f64>) -> Self {
        let dev = (observed - expected).abs();
        Self {
            statistic: statistic.into(),
            kind: RecordKind::Tolerance,
            observed,
            expected,
            std_error,
            tolerance_or_p: dev,
            threshold: allowed,
            pass: dev <= allowed,
        }
    }

    /// `threshold` is filled in by the Bonferroni step.
    pub fn p_value(statistic: impl Into<String>, observed: f64, p: f64) -> Self {
        Self {
            statistic: statistic.into(),
            kind: RecordKind::PValue,
            observed,
            expected: f64::NAN,
            std_error: None,
            tolerance_or_p: p,
            threshold: f64::NAN,
            pass: false,
        }
    }

    pub fn exact(statistic: impl Into<String>, observed: f64, expected: f64) -> Self {
        Self {
            statistic: statistic.into(),
            kind: RecordKind::Exact,
            observed,
            expected,
            std_error: None,
            tolerance_or_p: (observed - expected).abs(),
            threshold: 0.0,
            pass: observed == expected,
        }
    }

    pub fn diagnostic(statistic: impl Into<String>, observed: f64, pass: bool) -> Self {
        Self {
            statistic: statistic.into(),
            kind: RecordKind::Diagnostic,
            observed,
            expected: observed,
            std_error: None,
            tolerance_or_p: 0.0,
            threshold: 0.0,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub n: usize,
    pub replicas: usize,
    /// `None` unless the caller opts into timing, which breaks byte-identity.
    pub wall_time_seconds: Option<f64>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub config: serde_json::Value,
    pub records: Vec<Record>,
    pub environment: Environment,
    /// Number of p-value records sharing the significance level.
    pub bonferroni_m: usize,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl Report {
    pub fn failed(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| !r.pass)
    }
}

/// Apply the Bonferroni correction and assemble the report.
pub fn finish(config: &ExperimentConfig, mut records: Vec<Record>, notes: Vec<String>) -> Result<Report> {
    let m = records.iter().filter(|r| r.kind == RecordKind::PValue).count();
    let level = config.thresholds.p_min / m.max(1) as f64;
    for r in &mut records {
        if r.kind == RecordKind::PValue {
            r.threshold = level;
            r.expected = level;
            r.pass = r.tolerance_or_p > level;
        }
    }
    for r in &records {
        let values = [r.observed, r.expected, r.tolerance_or_p, r.threshold];
        if values.iter().chain(r.std_error.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerics(format!("record '{}' holds a non-finite value", r.statistic)));
        }
    }
    let pass = !records.is_empty() && records.iter().all(|r| r.pass);
    let config_echo = serde_json::to_value(config).map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(Report {
        name: config.kind.name().to_string(),
        config: config_echo,
        records,
        environment: Environment {
            seed: config.seed,
            n: config.n,
            replicas: config.replicas,
            wall_time_seconds: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        bonferroni_m: m,
        notes,
        pass,
    })
}

/// Dispatch on `config.kind`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    match config.kind {
        ExperimentKind::Clt => run_clt_experiment(config),
        ExperimentKind::Kingman => run_kingman_equivalence(config),
        ExperimentKind::Feller => run_feller_checks(config),
        ExperimentKind::Charpoly => run_charpoly_experiment(config),
    }
}

fn replicate<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

fn frozen_source(config: &ExperimentConfig, params: &ModelParams) -> Result<FrequencySource> {
    match &config.source {
        SourceSpec::PowerLaw => FrequencySource::power_law(params.alpha()),
        SourceSpec::StickBreaking { seed, max_depth, .. } => {
            if params.variant() != Variant::AlphaTheta {
                return Err(Error::InvalidParams("stick-breaking sources need alpha > 0".into()));
            }
            let mut src = FrequencySource::stick_breaking(params, *seed).with_max_depth(*max_depth);
            src.freeze();
            Ok(src)
        }
    }
}

fn is_zero(weights: &WeightSeq) -> bool {
    matches!(weights.settle(0.0), Some(s) if s.last == 0 && s.limit == Complex64::new(0.0, 0.0))
}

/// `Σ_j a_j E(D_{m,j} | P)` to absolute accuracy `precision`.
///
/// The weights are split as `a_j = c + (a_j − c)` with `a_j − c` negligible
/// past some `J`, so the sum is `c E(K_m | P)` plus a finite weighted mean.
fn analytic_center(source: &mut FrequencySource, weights: &WeightSeq, m: usize, precision: f64) -> Result<Complex64> {
    if m == 0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let eps = precision / (4.0 * m as f64);
    let settled = weights.settle(eps).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "weights '{}' do not settle to a constant; use empirical centering",
            weights.label()
        ))
    })?;
    let mut total = Complex64::new(0.0, 0.0);
    if settled.limit.norm() > 0.0 {
        let k = expected_occupied(source, m, precision / (4.0 * settled.limit.norm()))?;
        total += settled.limit * k;
    }
    let terms: Vec<(usize, Complex64)> = (1..=settled.last.min(m))
        .map(|j| (j, weights.eval(j) - settled.limit))
        .collect();
    Ok(total + weighted_occupancy_mean(source, m, &terms, precision / 4.0)?)
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

/// Standard error of the sample variance from the fourth central moment.
fn variance_se(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mean, var) = mean_var(x);
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    ((m4 - var * var).max(0.0) / n).sqrt()
}

fn center_columns(rows: &mut [Vec<f64>]) {
    let d = rows.first().map_or(0, |r| r.len());
    for i in 0..d {
        let mean = mean_var(&column(rows, i)).0;
        for r in rows.iter_mut() {
            r[i] -= mean;
        }
    }
}

/// Conditional functional CLT for `S_a` at the checkpoints.
pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let params = config.params()?;
    if params.variant() != Variant::AlphaTheta {
        return Err(Error::InvalidParams("the CLT experiment needs alpha in (0, 1)".into()));
    }
    let alpha = params.alpha();
    let weights = config.weights.build()?;
    if !weights.is_real() {
        return Err(Error::InvalidArgument("the CLT experiment takes real weights".into()));
    }
    if !weights.admissible_for(alpha) {
        return Err(Error::InvalidArgument(format!(
            "weights '{}' lack a growth certificate with exponent below alpha^2/2",
            weights.label()
        )));
    }
    let mut source = frozen_source(config, &params)?;
    let depth = source.generated();
    let c0 = estimate_c0(&mut source, depth)?;
    let cks = Checkpoints::new(config.checkpoints.clone())?;
    let times = cks.fractions().to_vec();
    let sizes = cks.sizes(config.n);
    let d = times.len();
    let scale = (config.n as f64).powf(alpha / 2.0);
    let th = config.thresholds;
    let mut notes = Vec::new();
    let mut records = vec![Record::diagnostic("c0", c0.c0, true)];

    if is_zero(&weights) {
        records.push(Record::exact("x_identically_zero", 0.0, 0.0));
        notes.push("zero weights: the statistic vanishes identically".into());
        return finish(config, records, notes);
    }

    let centers: Vec<f64> = match config.centering {
        Centering::Analytic => sizes
            .iter()
            .map(|&m| Ok(analytic_center(&mut source, &weights, m, config.tol * scale)?.re))
            .collect::<Result<_>>()?,
        Centering::Empirical => {
            notes.push("empirical centering: replica means subtracted per checkpoint".into());
            vec![0.0; d]
        }
    };

    let mut paths = replicate(config.replicas, |r| {
        let mut src = source.replica()?;
        let traj = sample_urn_split(&mut src, config.n, &cks, derive_seed(config.seed, r))?;
        Ok(traj
            .counts
            .iter()
            .zip(&centers)
            .map(|(c, center)| (weighted_sum(c, &weights).re - center) / scale)
            .collect::<Vec<f64>>())
    })?;
    if config.centering == Centering::Empirical {
        center_columns(&mut paths);
    }

    let oracle = cov_zalpha_grid(alpha, &weights, &times, config.tol)?.scaled(c0.c0.powf(alpha));
    let cols: Vec<Vec<f64>> = (0..d).map(|i| column(&paths, i)).collect();
    let last = d - 1;

    let x1 = &cols[last];
    let v1 = oracle.values[last][last];
    let se1 = variance_se(x1);
    records.push(Record::tolerance(
        "var_x(1)",
        mean_var(x1).1,
        v1,
        th.var_rel * v1 + th.se_mult * se1,
        Some(se1),
    ));
    for i in 0..d {
        for j in i..d {
            let o = oracle.values[i][j];
            records.push(Record::tolerance(
                format!("cov_x({},{})", times[i], times[j]),
                covariance(&cols[i], &cols[j]),
                o,
                th.cov_rel * o.abs(),
                Some(covariance_se(&cols[i], &cols[j])),
            ));
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            let o = oracle.values[i][j] / (oracle.values[i][i] * oracle.values[j][j]).sqrt();
            records.push(Record::tolerance(
                format!("corr_x({},{})", times[i], times[j]),
                correlation(&cols[i], &cols[j]),
                o,
                th.corr_abs,
                None,
            ));
        }
    }
    if config.centering == Centering::Analytic {
        let (mean, var) = mean_var(x1);
        let se = (var / x1.len() as f64).sqrt();
        records.push(Record::tolerance("mean_x(1)", mean, 0.0, th.mean_se * se, Some(se)));
    }
    let mut sampler = limit_process_sampler(&oracle, derive_seed(config.seed, u64::MAX))?;
    let gauss: Vec<f64> = sampler.sample_paths(config.replicas).into_iter().map(|p| p[last]).collect();
    let ks = ks_two_sample(x1, &gauss)?;
    records.push(Record::p_value("ks_x(1)_vs_limit", ks.statistic, ks.p_value));
    if sampler.jitter() > 0.0 {
        notes.push(format!("oracle covariance factorized with jitter {:e}", sampler.jitter()));
    }
    finish(config, records, notes)
}

const KINGMAN_COORDS: usize = 3;
const BIN_GROUPS: usize = 5;
const BIN_MIN_POOLED: u64 = 10;
const MIN_EXPECTED: f64 = 5.0;

fn head_counts(c: &CycleCounts) -> Vec<u64> {
    (1..=KINGMAN_COORDS).map(|j| c.get(j)).collect()
}

/// Push a binned chi-square record, or a failing diagnostic if the bins stay
/// too sparse after merging.
fn chi2_record(records: &mut Vec<Record>, name: &str, a: &[Vec<u64>], b: &[Vec<u64>]) -> Result<()> {
    let bins = bin_joint(a, b, BIN_GROUPS, BIN_MIN_POOLED)?;
    if bins.a.len() < 2 {
        records.push(Record::diagnostic(format!("{name}_degenerate_bins"), bins.a.len() as f64, false));
        return Ok(());
    }
    if bins.min_expected < MIN_EXPECTED {
        records.push(Record::diagnostic(format!("{name}_min_expected"), bins.min_expected, false));
        return Ok(());
    }
    let t = chi2_two_sample(&bins.a, &bins.b)?;
    records.push(Record::p_value(name, t.statistic, t.p_value));
    Ok(())
}

fn mean_record(name: &str, x: &[f64], expected: f64, se_mult: f64) -> Record {
    let (mean, var) = mean_var(x);
    let se = (var / x.len() as f64).sqrt();
    Record::tolerance(name, mean, expected, se_mult * se, Some(se))
}

/// CRP cycle counts against urn occupancy counts under fresh GEM frequencies.
pub fn run_kingman_equivalence(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let params = config.params()?;
    if params.variant() != Variant::AlphaTheta {
        return Err(Error::InvalidParams("the equivalence test needs alpha in (0, 1)".into()));
    }
    let n = config.n;
    let depth = config.kingman_depth.unwrap_or((n / 16).max(64));
    let cks = Checkpoints::final_only();
    let draws = replicate(config.replicas, |r| {
        let crp = simulate_crp(&params, n, &cks, derive_seed(config.seed, 2 * r))?;
        let src_seed = derive_seed(config.seed, 2 * r + 1);
        let mut src = FrequencySource::stick_breaking(&params, src_seed).with_max_depth(depth);
        let urn = sample_urn_split(&mut src, n, &cks, derive_seed(src_seed, 1))?;
        Ok((
            head_counts(crp.final_counts()),
            crp.blocks[0] as f64,
            head_counts(urn.final_counts()),
            urn.blocks[0] as f64,
        ))
    })?;
    let c: Vec<Vec<u64>> = draws.iter().map(|d| d.0.clone()).collect();
    let dd: Vec<Vec<u64>> = draws.iter().map(|d| d.2.clone()).collect();
    let kc: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let ku: Vec<f64> = draws.iter().map(|d| d.3).collect();
    let mut records = Vec::new();
    chi2_record(&mut records, "chi2_joint_c123_vs_d123", &c, &dd)?;
    let target = block_count_mean(&params, n);
    let se = config.thresholds.mean_se;
    records.push(mean_record("mean_blocks_crp", &kc, target, se));
    records.push(mean_record("mean_blocks_urn", &ku, target, se));
    let notes = vec![format!("urn stick depth {depth}, collapsed tail seated by the residual CRP")];
    finish(config, records, notes)
}

/// `E C_{n,j}` under the Ewens measure with parameter `θ`.
pub fn ewens_cycle_mean(theta: f64, n: usize, j: usize) -> f64 {
    if j == 0 || j > n {
        return 0.0;
    }
    let (nf, jf) = (n as f64, j as f64);
    let ln = ln_gamma(nf + 1.0) - ln_gamma(nf - jf + 1.0) + ln_gamma(nf - jf + theta) - ln_gamma(nf + theta);
    theta / jf * ln.exp()
}

const FELLER_M: usize = 3;

/// Checks of the Feller coupling and the Poisson regime of the `(0, θ)` model.
pub fn run_feller_checks(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let params = config.params()?;
    if params.variant() != Variant::ZeroTheta {
        return Err(Error::InvalidParams("the Feller checks need alpha = 0 and theta > 0".into()));
    }
    let theta = params.theta();
    let th = config.thresholds;
    let n = config.n;
    let mut sizes: BTreeSet<usize> = config.feller_sizes.iter().copied().collect();
    sizes.insert(n);
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("feller sizes must be positive".into()));
    }
    let sizes: Vec<usize> = sizes.into_iter().collect();
    let at_n = sizes.iter().position(|&s| s == n).unwrap();
    let cks = Checkpoints::final_only();
    let r_count = config.replicas;

    // (a) and (c): one coupling draw per replica at all sizes
    let draws = replicate(r_count, |r| {
        let f = feller_coupling(theta, &sizes, FELLER_M, derive_seed(config.seed, 2 * r))?;
        let crp = simulate_crp(&params, n, &cks, derive_seed(config.seed, 2 * r + 1))?;
        let diffs: Vec<f64> =
            f.coupled.iter().map(|c| (c.get(1) as f64 - f.limit[0] as f64).abs()).collect();
        Ok((head_counts(&f.coupled[at_n]), head_counts(crp.final_counts()), f.limit, diffs))
    })?;
    let mut records = Vec::new();
    let hat: Vec<Vec<u64>> = draws.iter().map(|d| d.0.clone()).collect();
    let crp: Vec<Vec<u64>> = draws.iter().map(|d| d.1.clone()).collect();
    chi2_record(&mut records, "chi2_coupled_vs_crp", &hat, &crp)?;

    // (b) W_j ~ Poisson(θ/j), independent
    let w: Vec<Vec<f64>> = (0..FELLER_M)
        .map(|j| draws.iter().map(|d| d.2[j] as f64).collect())
        .collect();
    let rf = r_count as f64;
    for (j, wj) in w.iter().enumerate() {
        let lambda = theta / (j + 1) as f64;
        records.push(mean_record(&format!("mean_w{}", j + 1), wj, lambda, th.se_mult));
        let se = ((lambda + 2.0 * lambda * lambda) / rf).sqrt();
        records.push(Record::tolerance(
            format!("var_w{}", j + 1),
            mean_var(wj).1,
            lambda,
            th.se_mult * se,
            Some(se),
        ));
    }
    for j in 0..FELLER_M {
        for k in j + 1..FELLER_M {
            let bound = th.se_mult / rf.sqrt();
            records.push(Record::tolerance(
                format!("corr_w{}_w{}", j + 1, k + 1),
                correlation(&w[j], &w[k]),
                0.0,
                bound,
                None,
            ));
        }
    }

    // (c) coupling distance decreases in n
    let dist: Vec<f64> = (0..sizes.len())
        .map(|i| draws.iter().map(|d| d.3[i]).sum::<f64>() / rf)
        .collect();
    let tracked: Vec<(usize, f64)> = sizes
        .iter()
        .zip(&dist)
        .filter(|(s, _)| config.feller_sizes.contains(s))
        .map(|(&s, &v)| (s, v))
        .collect();
    for &(s, v) in &tracked {
        records.push(Record::diagnostic(format!("mean_abs_c{s}_1_minus_w1"), v, true));
    }
    if tracked.len() >= 2 {
        let drops = tracked.windows(2).filter(|p| p[1].1 < p[0].1).count();
        records.push(Record::exact(
            "coupling_distance_strict_decreases",
            drops as f64,
            (tracked.len() - 1) as f64,
        ));
    }

    // (d) Σ (C_{n,j} − E C_{n,j}) / j stabilizes between n and 2n
    if config.series_n > 0 {
        let m1 = config.series_n;
        let m2 = 2 * m1;
        let shift = |m: usize| (1..=m).map(|j| ewens_cycle_mean(theta, m, j) / j as f64).sum::<f64>();
        let (e1, e2) = (shift(m1), shift(m2));
        let series = |c: &CycleCounts| c.iter().map(|(j, k)| k as f64 / j as f64).sum::<f64>();
        let pairs = replicate(config.series_replicas, |r| {
            let base = derive_seed(config.seed, u64::MAX - r);
            let a = simulate_crp(&params, m1, &cks, derive_seed(base, 1))?;
            let b = simulate_crp(&params, m2, &cks, derive_seed(base, 2))?;
            Ok((series(a.final_counts()) - e1, series(b.final_counts()) - e2))
        })?;
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let ks = ks_two_sample(&x, &y)?;
        records.push(Record::p_value(format!("ks_series_n{m1}_vs_n{m2}"), ks.statistic, ks.p_value));
    }
    finish(config, records, Vec::new())
}

fn complex_points(points: &[[f64; 2]]) -> Vec<Complex64> {
    points.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Conditional CLT for `log det(I − zM_n)` and the zoom-in near `z = 0`.
pub fn run_charpoly_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let params = config.params()?;
    if params.variant() != Variant::AlphaTheta {
        return Err(Error::InvalidParams("the characteristic-polynomial CLT needs alpha in (0, 1)".into()));
    }
    let alpha = params.alpha();
    let zs = complex_points(&config.z_points);
    let zooms = complex_points(&config.zoom_points);
    if zs.is_empty() && zooms.is_empty() {
        return Err(Error::InvalidArgument("no z points given".into()));
    }
    for &z in &zs {
        if ComplexPoint::new(z)?.region() != Region::Inside {
            return Err(Error::InvalidArgument(format!("z = {z} lies outside the unit disc")));
        }
    }
    let n = config.n;
    let scale = (n as f64).powf(alpha / 2.0);
    for &z in &zooms {
        if !(z.norm() < scale) {
            return Err(Error::InvalidArgument(format!("zoom point {z} exceeds n^(alpha/2) = {scale}")));
        }
    }
    let th = config.thresholds;
    let mut source = frozen_source(config, &params)?;
    let depth = source.generated();
    let c0 = estimate_c0(&mut source, depth)?;
    let c0a = c0.c0.powf(alpha);

    let main: Vec<WeightSeq> = zs.iter().map(|&z| WeightSeq::log_one_minus(z)).collect::<Result<_>>()?;
    let zoom: Vec<WeightSeq> =
        zooms.iter().map(|&z| WeightSeq::log_one_minus(z / scale)).collect::<Result<_>>()?;
    let mut notes = Vec::new();
    let (main_centers, zoom_centers): (Vec<Complex64>, Vec<Complex64>) = match config.centering {
        Centering::Analytic => (
            main.iter()
                .map(|w| analytic_center(&mut source, w, n, config.tol * scale))
                .collect::<Result<_>>()?,
            zoom.iter().map(|w| analytic_center(&mut source, w, n, config.tol)).collect::<Result<_>>()?,
        ),
        Centering::Empirical => {
            notes.push("empirical centering: replica means subtracted".into());
            (vec![Complex64::new(0.0, 0.0); main.len()], vec![Complex64::new(0.0, 0.0); zoom.len()])
        }
    };

    let cks = Checkpoints::final_only();
    // row layout: Re/Im of each main point, then Re/Im of each zoom point
    let mut rows = replicate(config.replicas, |r| {
        let mut src = source.replica()?;
        let traj = sample_urn_split(&mut src, n, &cks, derive_seed(config.seed, r))?;
        let counts = traj.final_counts();
        let mut row = Vec::with_capacity(2 * (main.len() + zoom.len()));
        for (w, c) in main.iter().zip(&main_centers) {
            let x = (weighted_sum(counts, w) - c) / scale;
            row.extend([x.re, x.im]);
        }
        for (w, c) in zoom.iter().zip(&zoom_centers) {
            let y = weighted_sum(counts, w) - c;
            row.extend([y.re, y.im]);
        }
        Ok(row)
    })?;
    if config.centering == Centering::Empirical {
        center_columns(&mut rows);
    }
    let cols: Vec<Vec<f64>> = (0..rows[0].len()).map(|i| column(&rows, i)).collect();
    let mut records = vec![Record::diagnostic("c0", c0.c0, true)];
    let parts = ["re", "im"];

    let blocks: Vec<Vec<[[f64; 2]; 2]>> = zs
        .iter()
        .map(|&z| {
            zs.iter()
                .map(|&w| {
                    if z.norm() == 0.0 || w.norm() == 0.0 {
                        return Ok([[0.0; 2]; 2]);
                    }
                    let b = eta_real_cov(alpha, z, w, 1.0, 1.0, config.tol)?;
                    Ok(b.map(|row| row.map(|v| v * c0a)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    for a in 0..zs.len() {
        let var_a = blocks[a][a];
        if var_a[0][0] == 0.0 && var_a[1][1] == 0.0 {
            let zero = cols[2 * a].iter().chain(&cols[2 * a + 1]).all(|v| *v == 0.0);
            records.push(Record::exact(format!("z={}_identically_zero", zs[a]), zero as u8 as f64, 1.0));
            continue;
        }
        for b in a..zs.len() {
            let var_b = blocks[b][b];
            for p in 0..2 {
                for q in 0..2 {
                    if a == b && q < p {
                        continue;
                    }
                    let o = blocks[a][b][p][q];
                    let allowed = if a == b && p == q {
                        th.cov_rel * o.abs()
                    } else {
                        th.cov_rel * (var_a[p][p] * var_b[q][q]).sqrt()
                    };
                    let (x, y) = (&cols[2 * a + p], &cols[2 * b + q]);
                    records.push(Record::tolerance(
                        format!("cov({} z={}, {} z={})", parts[p], zs[a], parts[q], zs[b]),
                        covariance(x, y),
                        o,
                        allowed,
                        Some(covariance_se(x, y)),
                    ));
                }
            }
        }
        if config.centering == Centering::Analytic {
            for p in 0..2 {
                let x = &cols[2 * a + p];
                if mean_var(x).1 > 0.0 {
                    records.push(mean_record(&format!("mean_{} z={}", parts[p], zs[a]), x, 0.0, th.mean_se));
                }
            }
        }
    }

    let var_z1 = cov_zj(alpha, 1, 1, 1.0, 1.0, config.tol)?;
    let off = 2 * zs.len();
    for (k, &z) in zooms.iter().enumerate() {
        let total: Vec<f64> = (0..config.replicas)
            .map(|r| cols[off + 2 * k][r].powi(2) + cols[off + 2 * k + 1][r].powi(2))
            .collect();
        let (re, im) = (&cols[off + 2 * k], &cols[off + 2 * k + 1]);
        let observed = mean_var(re).1 + mean_var(im).1;
        let expected = z.norm_sqr() * c0a * var_z1;
        let se = (mean_var(&total).1 / config.replicas as f64).sqrt();
        if expected == 0.0 {
            let zero = re.iter().chain(im).all(|v| *v == 0.0);
            records.push(Record::exact(format!("zoom z={z}_identically_zero"), zero as u8 as f64, 1.0));
            continue;
        }
        records.push(Record::tolerance(
            format!("zoom_var z={z}"),
            observed,
            expected,
            th.cov_rel * expected,
            Some(se),
        ));
    }
    finish(config, records, notes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(kind);
        c.n = 2000;
        c.replicas = 400;
        c
    }

    #[test]
    fn validation_rules() {
        let mut c = small(ExperimentKind::Clt);
        c.replicas = 50;
        assert!(c.validate().is_err());
        let mut c = small(ExperimentKind::Clt);
        c.checkpoints = vec![0.5];
        assert!(c.validate().is_err());
        let mut c = small(ExperimentKind::Clt);
        c.source = SourceSpec::StickBreaking { seed: 3, frozen: false, max_depth: 1 << 12 };
        c.theta = 0.5;
        assert!(matches!(run_clt_experiment(&c), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_weights_pass_trivially() {
        let mut c = small(ExperimentKind::Clt);
        c.weights = WeightSpec::Const { value: 0.0 };
        let r = run_clt_experiment(&c).unwrap();
        assert!(r.pass);
        let mut c = small(ExperimentKind::Charpoly);
        c.z_points = vec![[0.0, 0.0]];
        c.zoom_points = vec![[0.0, 0.0]];
        let r = run_charpoly_experiment(&c).unwrap();
        assert!(r.pass, "{:?}", r.failed().collect::<Vec<_>>());
    }

    #[test]
    fn bonferroni_threshold() {
        let c = small(ExperimentKind::Clt);
        let recs = vec![Record::p_value("a", 0.0, 0.0006), Record::p_value("b", 0.0, 0.5)];
        let r = finish(&c, recs, Vec::new()).unwrap();
        assert_eq!(r.bonferroni_m, 2);
        assert_eq!(r.records[0].threshold, 0.0005);
        assert!(r.pass);
        assert!(finish(&c, vec![Record::tolerance("x", f64::NAN, 0.0, 1.0, None)], Vec::new()).is_err());
    }

    #[test]
    fn ewens_means_sum_to_n() {
        let theta = 1.7;
        let n = 50;
        let total: f64 = (1..=n).map(|j| j as f64 * ewens_cycle_mean(theta, n, j)).sum();
        assert!((total - n as f64).abs() < 1e-9);
        // θ = 1: E C_{n,j} = 1/j
        assert!((ewens_cycle_mean(1.0, 30, 4) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn small_clt_runs() {
        let r = run_clt_experiment(&small(ExperimentKind::Clt)).unwrap();
        assert!(r.records.len() > 5);
        let r2 = run_clt_experiment(&small(ExperimentKind::Clt)).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn charpoly_rejects_circle() {
        let mut c = small(ExperimentKind::Charpoly);
        c.z_points = vec![[1.0, 0.0]];
        assert!(run_charpoly_experiment(&c).is_err());
        c.z_points = vec![[1.5, 0.0]];
        assert!(run_charpoly_experiment(&c).is_err());
    }
}
