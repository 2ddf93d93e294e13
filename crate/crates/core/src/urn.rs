//! Infinite urn (Karlin) model: frequency sources, occupancy sampling and
//! conditional occupancy means.
//!
//! A source stores a prefix `P_1..P_L` together with the exact tail masses
//! `T_i = 1 − Σ_{m≤i} P_m` and hazards `h_i = P_i / T_{i−1}`. Power-law sources
//! have an exact rejection sampler past the stored prefix. Stick-breaking
//! sources grow lazily up to a maximum depth `L`; balls that land beyond it are
//! seated by a CRP with parameters `(α, θ + Lα)`, which is the law of the
//! residual partition because the renormalised remaining sticks are
//! `GEM(α, θ + Lα)` independently of the prefix.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::crp::{Checkpoints, CycleCounts, CycleTrajectory, ModelParams, SeatingState};
use crate::error::{Error, Result};
use crate::quad;
use crate::seed::{self, StreamRng};
use crate::special::{hurwitz_zeta, ln_binomial, ln_gamma, zeta};

/// Occupancy counts `D_{⌊nt⌋,j}` (as `counts`) and occupied urns `K` (as `blocks`).
pub type OccupancyTrajectory = CycleTrajectory;

/// Stored prefix length of a power-law source.
pub const POWER_LAW_DEPTH: usize = 1 << 20;
/// Default maximum explicit depth of a stick-breaking source.
pub const DEFAULT_MAX_DEPTH: usize = 1 << 20;
/// Tail mass below which `freeze` stops generating sticks.
pub const FREEZE_TAIL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    StickBreaking { alpha: f64, theta: f64, seed: u64 },
    PowerLaw { alpha: f64 },
}

#[derive(Debug, Clone, Default)]
struct Prefix {
    // index 0 unused so that probs[i] = P_i
    probs: Vec<f64>,
    hazards: Vec<f64>,
    // tails[i] = mass beyond urn i, tails[0] = 1
    tails: Vec<f64>,
}

impl Prefix {
    fn empty() -> Self {
        Self { probs: vec![0.0], hazards: vec![0.0], tails: vec![1.0] }
    }

    fn len(&self) -> usize {
        self.probs.len() - 1
    }
}

/// A frequency sequence in order of appearance with explicit tail mass.
#[derive(Debug, Clone)]
pub struct FrequencySource {
    kind: SourceKind,
    prefix: Arc<Prefix>,
    rng: Option<StreamRng>,
    beta_params: Option<(f64, f64)>,
    max_depth: usize,
    frozen: bool,
}

/// Where a single ball landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Landing {
    Urn(u64),
    Collapsed,
}

impl FrequencySource {
    /// GEM(α, θ) sticks `B_i ~ Beta(1 − α, θ + iα)`, generated on demand.
    ///
    /// Beta variates come from `rand_distr::Beta` (Cheng's BB/BC algorithms)
    /// driven by a ChaCha8 stream seeded with `seed`.
    pub fn stick_breaking(params: &ModelParams, seed: u64) -> Self {
        Self {
            kind: SourceKind::StickBreaking {
                alpha: params.alpha(),
                theta: params.theta(),
                seed,
            },
            prefix: Arc::new(Prefix::empty()),
            rng: Some(seed::rng_from_seed(seed)),
            beta_params: Some((params.alpha(), params.theta())),
            max_depth: DEFAULT_MAX_DEPTH,
            frozen: false,
        }
    }

    /// `P_j = j^{−1/α} / ζ(1/α)`.
    pub fn power_law(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParams(format!(
                "power-law alpha={alpha} must lie in (0, 1)"
            )));
        }
        let s = 1.0 / alpha;
        let z = zeta(s);
        let depth = POWER_LAW_DEPTH;
        let mut probs = Vec::with_capacity(depth + 1);
        probs.push(0.0);
        for j in 1..=depth {
            probs.push((j as f64).powf(-s) / z);
        }
        let mut tails = vec![0.0; depth + 1];
        tails[depth] = hurwitz_zeta(s, depth as f64 + 1.0) / z;
        for i in (0..depth).rev() {
            tails[i] = tails[i + 1] + probs[i + 1];
        }
        let mut hazards = vec![0.0; depth + 1];
        for i in 1..=depth {
            hazards[i] = probs[i] / tails[i - 1];
        }
        Ok(Self {
            kind: SourceKind::PowerLaw { alpha },
            prefix: Arc::new(Prefix { probs, hazards, tails }),
            rng: None,
            beta_params: None,
            max_depth: depth,
            frozen: true,
        })
    }

    /// Cap the explicit depth of a stick-breaking source (no effect on power laws).
    pub fn with_max_depth(mut self, depth: usize) -> Self {
        if matches!(self.kind, SourceKind::StickBreaking { .. }) {
            self.max_depth = depth.max(1);
        }
        self
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        match self.kind {
            SourceKind::StickBreaking { alpha, .. } | SourceKind::PowerLaw { alpha } => alpha,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Number of generated frequencies.
    pub fn generated(&self) -> usize {
        self.prefix.len()
    }

    /// `P_1..P_L` of the generated prefix.
    pub fn frequencies(&self) -> &[f64] {
        &self.prefix.probs[1..]
    }

    /// Mass beyond the generated prefix.
    pub fn tail_mass(&self) -> f64 {
        *self.prefix.tails.last().unwrap()
    }

    /// `1/ζ(1/α)` for power laws.
    pub fn power_law_c0(&self) -> Option<f64> {
        match self.kind {
            SourceKind::PowerLaw { alpha } => Some(1.0 / zeta(1.0 / alpha)),
            SourceKind::StickBreaking { .. } => None,
        }
    }

    /// Generate sticks until the prefix holds `depth` frequencies (or the cap).
    pub fn extend_to(&mut self, depth: usize) {
        let target = depth.min(self.max_depth);
        if self.frozen || self.prefix.len() >= target {
            return;
        }
        let (alpha, theta) = self.beta_params.expect("stick-breaking source");
        let rng = self.rng.as_mut().expect("stick-breaking source");
        let prefix = Arc::make_mut(&mut self.prefix);
        while prefix.len() < target {
            let i = prefix.len() + 1;
            let b = Beta::new(1.0 - alpha, theta + i as f64 * alpha)
                .expect("valid beta parameters")
                .sample(rng);
            let t = *prefix.tails.last().unwrap();
            prefix.probs.push(t * b);
            prefix.hazards.push(b);
            prefix.tails.push(t * (1.0 - b));
        }
    }

    /// Pre-generate the prefix and make the source read-only.
    ///
    /// Stick-breaking sources generate until the tail mass drops below
    /// `FREEZE_TAIL` or the maximum depth is reached, whichever is first.
    pub fn freeze(&mut self) {
        if self.frozen {
            return;
        }
        while self.tail_mass() >= FREEZE_TAIL && self.prefix.len() < self.max_depth {
            let next = (self.prefix.len() * 2).max(1024);
            self.extend_to(next);
        }
        self.frozen = true;
        self.max_depth = self.prefix.len();
    }

    /// A cheap read-only copy sharing the generated prefix.
    pub fn replica(&self) -> Result<Self> {
        if !self.frozen {
            return Err(Error::InvalidArgument(
                "only frozen sources can be shared across replicas".into(),
            ));
        }
        Ok(self.clone())
    }

    fn collapsed_params(&self) -> Option<ModelParams> {
        let (alpha, theta) = self.beta_params?;
        ModelParams::new(alpha, theta + self.prefix.len() as f64 * alpha).ok()
    }

    /// Draw one ball conditioned to land beyond urn `after`.
    fn draw_beyond<R: Rng + ?Sized>(&mut self, after: usize, rng: &mut R) -> Landing {
        let x = rng.random::<f64>() * self.prefix.tails[after];
        if x < self.tail_mass() && !self.frozen {
            // grow until x is covered or the cap is hit
            while x < self.tail_mass() && self.prefix.len() < self.max_depth {
                let next = (self.prefix.len() * 2).max(64);
                self.extend_to(next);
            }
        }
        let tails = &self.prefix.tails;
        let idx = tails[after + 1..].partition_point(|&t| t > x);
        let urn = after + 1 + idx;
        if urn <= self.prefix.len() {
            return Landing::Urn(urn as u64);
        }
        match self.kind {
            SourceKind::PowerLaw { alpha } => {
                Landing::Urn(power_law_beyond(1.0 / alpha, self.prefix.len() as u64, rng))
            }
            SourceKind::StickBreaking { .. } => Landing::Collapsed,
        }
    }
}

/// Exact draw from `j^{−s}` restricted to `j > cut`, by rejection from the
/// continuous Pareto envelope on `(cut, ∞)` discretised with `floor + 1`.
fn power_law_beyond<R: Rng + ?Sized>(s: f64, cut: u64, rng: &mut R) -> u64 {
    let cutf = cut as f64;
    loop {
        let u = 1.0 - rng.random::<f64>();
        let x = cutf * u.powf(-1.0 / (s - 1.0));
        // labels past 2^63 have probability far below 1e-12; redraw them
        if !(x < 9.0e18) {
            continue;
        }
        let j = x.floor() as u64 + 1;
        let jf = j as f64;
        let accept = (s - 1.0) / (jf * ((1.0 - s) * (-1.0 / jf).ln_1p()).exp_m1());
        if rng.random::<f64>() < accept {
            return j;
        }
    }
}

/// Ball counts per urn, plus the collapsed-tail restaurant.
struct Occupancy {
    dense: Vec<u64>,
    sparse: HashMap<u64, u64>,
    occupied: Vec<u64>,
    tail_params: Option<ModelParams>,
    tail: Option<SeatingState>,
}

const DENSE_LIMIT: u64 = 1 << 16;

impl Occupancy {
    fn new(tail_params: Option<ModelParams>) -> Self {
        Self {
            dense: Vec::new(),
            sparse: HashMap::new(),
            occupied: Vec::new(),
            tail_params,
            tail: None,
        }
    }

    fn add(&mut self, urn: u64, x: u64) {
        if x == 0 {
            return;
        }
        let slot = if urn < DENSE_LIMIT {
            let i = urn as usize;
            if self.dense.len() <= i {
                self.dense.resize((i + 1).next_power_of_two(), 0);
            }
            &mut self.dense[i]
        } else {
            self.sparse.entry(urn).or_insert(0)
        };
        if *slot == 0 {
            self.occupied.push(urn);
        }
        *slot += x;
    }

    fn add_collapsed<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let params = self.tail_params.expect("collapsed tail only for stick-breaking");
        match self.tail.as_mut() {
            Some(state) => state.seat_next(&params, rng),
            None => self.tail = Some(SeatingState::new(false)),
        }
    }

    fn count(&self, urn: u64) -> u64 {
        if urn < DENSE_LIMIT {
            self.dense[urn as usize]
        } else {
            self.sparse[&urn]
        }
    }

    fn snapshot(&self) -> (CycleCounts, u64) {
        let mut sizes: Vec<u64> = self.occupied.iter().map(|&u| self.count(u)).collect();
        if let Some(t) = &self.tail {
            sizes.extend(t.table_sizes().iter().map(|&s| s as u64));
        }
        let blocks = sizes.len() as u64;
        sizes.sort_unstable();
        let mut pairs: Vec<(usize, u64)> = Vec::new();
        for s in sizes {
            match pairs.last_mut() {
                Some(last) if last.0 == s as usize => last.1 += 1,
                _ => pairs.push((s as usize, 1)),
            }
        }
        (CycleCounts::from_pairs(pairs), blocks)
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    Ok(())
}

fn run_batches<F>(
    n: usize,
    checkpoints: &Checkpoints,
    occ: &mut Occupancy,
    mut throw: F,
) -> OccupancyTrajectory
where
    F: FnMut(u64, &mut Occupancy),
{
    let sizes = checkpoints.sizes(n);
    let mut counts = Vec::with_capacity(sizes.len());
    let mut blocks = Vec::with_capacity(sizes.len());
    let mut thrown = 0usize;
    for &m in &sizes {
        throw((m - thrown) as u64, occ);
        thrown = m;
        let (c, k) = occ.snapshot();
        counts.push(c);
        blocks.push(k);
    }
    CycleTrajectory {
        n,
        checkpoints: checkpoints.fractions().to_vec(),
        sizes,
        counts,
        blocks,
    }
}

/// Throw `n` balls one at a time by inverse-CDF search over the tail masses.
pub fn sample_urn(
    source: &mut FrequencySource,
    n: usize,
    checkpoints: &Checkpoints,
    seed: u64,
) -> Result<OccupancyTrajectory> {
    check_n(n)?;
    let mut rng = seed::rng_from_seed(seed);
    let mut occ = Occupancy::new(None);
    Ok(run_batches(n, checkpoints, &mut occ, |batch, occ| {
        for _ in 0..batch {
            place(source, 0, occ, &mut rng);
        }
    }))
}

fn place<R: Rng + ?Sized>(
    source: &mut FrequencySource,
    after: usize,
    occ: &mut Occupancy,
    rng: &mut R,
) {
    match source.draw_beyond(after, rng) {
        Landing::Urn(u) => occ.add(u, 1),
        Landing::Collapsed => {
            if occ.tail_params.is_none() {
                occ.tail_params = source.collapsed_params();
            }
            occ.add_collapsed(rng);
        }
    }
}

/// Expected number of balls below which the splitting sampler switches to
/// single-ball draws.
const SWITCH_MEAN: f64 = 1.0;

/// Same law as [`sample_urn`], thrown by sequential binomial splitting.
///
/// Each batch between checkpoints walks the urns in order, placing
/// `Binomial(rem, h_i)` balls in urn `i`, until the expected number landing in
/// the next urn falls below one; the remaining balls are then drawn one at a
/// time from the conditional law beyond the current urn.
pub fn sample_urn_split(
    source: &mut FrequencySource,
    n: usize,
    checkpoints: &Checkpoints,
    seed: u64,
) -> Result<OccupancyTrajectory> {
    check_n(n)?;
    let mut rng = seed::rng_from_seed(seed);
    let mut occ = Occupancy::new(None);
    Ok(run_batches(n, checkpoints, &mut occ, |batch, occ| {
        let mut rem = batch;
        let mut i = 1usize;
        while rem > 0 {
            if i > source.generated() {
                if source.frozen || source.generated() >= source.max_depth {
                    break;
                }
                let next = (source.generated() * 2).max(64);
                source.extend_to(next);
                continue;
            }
            let h = source.prefix.hazards[i];
            if (rem as f64) * h < SWITCH_MEAN {
                break;
            }
            let x = if h >= 1.0 {
                rem
            } else {
                Binomial::new(rem, h).expect("valid binomial").sample(&mut rng)
            };
            occ.add(i as u64, x);
            rem -= x;
            i += 1;
        }
        let after = i - 1;
        for _ in 0..rem {
            place(source, after, occ, &mut rng);
        }
    }))
}

/// Bound on `Σ_{m>i} C(n,j) P_m^j (1−P_m)^{n−j}`, namely
/// `C(n,j) · (max remaining P)^{j−1} · T_i`.
fn tail_bound(ln_choose: f64, j: u64, max_remaining: f64, tail: f64) -> f64 {
    if tail <= 0.0 {
        return 0.0;
    }
    (ln_choose + (j as f64 - 1.0) * max_remaining.ln() + tail.ln()).exp()
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be > 0")));
    }
    Ok(())
}

/// `ln P(Bin(n, p) = j)`.
#[inline]
fn ln_binom_pmf(ln_choose: f64, n: u64, j: u64, p: f64) -> f64 {
    ln_choose + j as f64 * p.ln() + (n - j) as f64 * (-p).ln_1p()
}

/// `∫_{a}^∞ f(x) dx + f'(a)/24` with `a = L + 1/2`, the midpoint Euler–Maclaurin
/// estimate of `Σ_{m>L} f(m)`, integrated up to `x_max` where the caller has
/// bounded the remainder.
fn power_tail_sum<F, D>(cut: usize, f: F, df: D, x_max: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let a = cut as f64 + 0.5;
    let correction = df(a) / 24.0;
    if x_max <= a {
        return Ok(correction);
    }
    let r = quad::integrate(|u: f64| {
        let x = u.exp();
        f(x) * x
    }, a.ln(), x_max.ln(), tol, 16)?;
    Ok(r.value + correction)
}

/// Per-urn summand `C(n,j) p^j (1−p)^{n−j}` and its derivative in `x` for
/// `p(x) = x^{−s}/ζ(s)`.
fn power_law_tail_j(s: f64, z: f64, n: u64, j: u64, cut: usize, tol: f64) -> Result<f64> {
    let lc = ln_binomial(n, j);
    let p = move |x: f64| x.powf(-s) / z;
    let f = move |x: f64| {
        let q = p(x);
        ln_binom_pmf(lc, n, j, q).exp()
    };
    let df = move |x: f64| {
        let q = p(x);
        let dq = -s * q / x;
        f(x) * (j as f64 / q - (n - j) as f64 / (1.0 - q)) * dq
    };
    // ∫_X^∞ C(n,j) ζ^{−j} x^{−sj} dx = C ζ^{−j} X^{1−sj}/(sj−1) < tol/10
    let sj = s * j as f64;
    let ln_c = lc - j as f64 * z.ln() - (sj - 1.0).ln();
    let ln_x = (ln_c - (tol / 10.0).ln()) / (sj - 1.0);
    power_tail_sum(cut, f, df, ln_x.exp(), tol / 2.0)
}

/// `E(D_{n,j} | P) = Σ_ℓ C(n,j) P_ℓ^j (1 − P_ℓ)^{n−j}` with absolute error below `tol`.
///
/// The ℓ-sum stops once `C(n,j) (max remaining P)^{j−1} T_ℓ < tol`. Past the
/// stored prefix a power law is summed by quadrature of the Euler–Maclaurin
/// integral; a stick-breaking source that cannot meet the bound within its
/// maximum depth returns an error.
pub fn conditional_occupancy_mean(
    source: &mut FrequencySource,
    n: usize,
    j: usize,
    tol: f64,
) -> Result<f64> {
    check_tol(tol)?;
    if j == 0 || j > n {
        return Err(Error::InvalidArgument(format!("need 1 <= j <= n, got j={j}, n={n}")));
    }
    let v = weighted_occupancy_mean(source, n, &[(j, Complex64::new(1.0, 0.0))], tol)?;
    Ok(v.re)
}

/// `Σ_j a_j E(D_{n,j} | P)` for a finite list of `(j, a_j)`, error below `tol`.
pub fn weighted_occupancy_mean(
    source: &mut FrequencySource,
    n: usize,
    weights: &[(usize, Complex64)],
    tol: f64,
) -> Result<Complex64> {
    check_tol(tol)?;
    check_n(n)?;
    let terms: Vec<(u64, Complex64, f64)> = weights
        .iter()
        .filter(|&&(j, a)| j >= 1 && j <= n && a != Complex64::new(0.0, 0.0))
        .map(|&(j, a)| (j as u64, a, ln_binomial(n as u64, j as u64)))
        .collect();
    if terms.is_empty() {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let nn = n as u64;
    let power = matches!(source.kind, SourceKind::PowerLaw { .. });
    let bound_at = |src: &FrequencySource, i: usize| -> f64 {
        let tail = src.prefix.tails[i];
        let max_rem = if power && i < src.generated() {
            src.prefix.probs[i + 1]
        } else {
            tail
        };
        terms
            .iter()
            .map(|&(j, a, lc)| a.norm() * tail_bound(lc, j, max_rem.min(1.0), tail))
            .sum()
    };
    let mut sum = Complex64::new(0.0, 0.0);
    let mut i = 0usize;
    loop {
        if bound_at(source, i) < tol {
            return Ok(sum);
        }
        if i >= source.generated() {
            if source.frozen || source.generated() >= source.max_depth {
                break;
            }
            let next = (source.generated() * 2).max(1024);
            source.extend_to(next);
            continue;
        }
        i += 1;
        let p = source.prefix.probs[i];
        for &(j, a, lc) in &terms {
            let lp = ln_binom_pmf(lc, nn, j, p);
            if lp > -745.0 {
                sum += a * lp.exp();
            }
        }
    }
    match source.kind {
        SourceKind::PowerLaw { alpha } => {
            let s = 1.0 / alpha;
            let z = zeta(s);
            let cut = source.generated();
            let budget = tol / (2.0 * terms.len() as f64);
            let tail = source.tail_mass();
            let max_rem = (cut as f64 + 1.0).powf(-s) / z;
            for &(j, a, lc) in &terms {
                if a.norm() * tail_bound(lc, j, max_rem, tail) < budget {
                    continue;
                }
                sum += a * power_law_tail_j(s, z, nn, j, cut, budget / a.norm())?;
            }
            Ok(sum)
        }
        SourceKind::StickBreaking { .. } => Err(Error::Numerics(format!(
            "tail bound {:e} exceeds tolerance {tol:e} at maximum depth {}; use empirical centering",
            bound_at(source, i),
            source.max_depth
        ))),
    }
}

/// `E(K_n | P) = Σ_ℓ (1 − (1 − P_ℓ)^n)`, with error below `tol`.
pub fn expected_occupied(source: &mut FrequencySource, n: usize, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    check_n(n)?;
    let nf = n as f64;
    let occupied = |p: f64| -(nf * (-p).ln_1p()).exp_m1();
    let mut sum = 0.0;
    let mut i = 0usize;
    loop {
        if nf * source.prefix.tails[i] < tol {
            return Ok(sum);
        }
        if i >= source.generated() {
            if source.frozen || source.generated() >= source.max_depth {
                break;
            }
            let next = (source.generated() * 2).max(1024);
            source.extend_to(next);
            continue;
        }
        i += 1;
        sum += occupied(source.prefix.probs[i]);
    }
    match source.kind {
        SourceKind::PowerLaw { alpha } => {
            let s = 1.0 / alpha;
            let z = zeta(s);
            let p = move |x: f64| x.powf(-s) / z;
            let f = move |x: f64| occupied(p(x));
            let df = move |x: f64| {
                let q = p(x);
                nf * ((nf - 1.0) * (-q).ln_1p()).exp() * (-s * q / x)
            };
            // ∫_X^∞ n x^{−s}/ζ dx = n X^{1−s} / ((s−1)ζ) < tol/10
            let ln_x = ((nf / ((s - 1.0) * z)).ln() - (tol / 10.0).ln()) / (s - 1.0);
            Ok(sum + power_tail_sum(source.generated(), f, df, ln_x.exp(), tol / 2.0)?)
        }
        SourceKind::StickBreaking { .. } => Err(Error::Numerics(format!(
            "tail bound {:e} exceeds tolerance {tol:e} at maximum depth {}; use empirical centering",
            nf * source.tail_mass(),
            source.max_depth
        ))),
    }
}

/// Estimate of the decay constant `C₀` in `P_j^↓ ∼ C₀ j^{−1/α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C0Estimate {
    pub c0: f64,
    pub std_error: f64,
    /// `Γ(1−α) C₀^α`.
    pub diversity: f64,
}

pub const C0_MIN_DEPTH: usize = 1000;
const C0_BLOCKS: usize = 8;

/// Fit `C₀` from the sorted prefix of depth `depth`.
///
/// Ranks `j ∈ [√d, d/8]` are split into eight log-spaced blocks; each block
/// gives the mean of `P_j^↓ j^{1/α}`, the estimate is their average and the
/// standard error their spread over `√8`. Power laws return the exact value.
pub fn estimate_c0(source: &mut FrequencySource, depth: usize) -> Result<C0Estimate> {
    let alpha = source.alpha();
    let g = ln_gamma(1.0 - alpha).exp();
    if let Some(c0) = source.power_law_c0() {
        return Ok(C0Estimate { c0, std_error: 0.0, diversity: g * c0.powf(alpha) });
    }
    if depth < C0_MIN_DEPTH {
        return Err(Error::Estimation(format!(
            "depth {depth} below the minimum {C0_MIN_DEPTH}"
        )));
    }
    source.extend_to(depth);
    if source.generated() < depth {
        return Err(Error::Estimation(format!(
            "source capped at depth {} below the requested {depth}",
            source.generated()
        )));
    }
    let mut sorted: Vec<f64> = source.frequencies()[..depth].to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let lo = (depth as f64).sqrt();
    let hi = depth as f64 / 8.0;
    let ratio = (hi / lo).ln() / C0_BLOCKS as f64;
    let inv = 1.0 / alpha;
    let mut means = Vec::with_capacity(C0_BLOCKS);
    for b in 0..C0_BLOCKS {
        let start = (lo * (ratio * b as f64).exp()).ceil() as usize;
        let end = ((lo * (ratio * (b + 1) as f64).exp()).ceil() as usize).max(start + 1);
        let vals: Vec<f64> = (start..end)
            .map(|j| sorted[j - 1] * (j as f64).powf(inv))
            .collect();
        means.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let c0 = means.iter().sum::<f64>() / C0_BLOCKS as f64;
    let var = means.iter().map(|m| (m - c0).powi(2)).sum::<f64>() / (C0_BLOCKS - 1) as f64;
    Ok(C0Estimate {
        c0,
        std_error: (var / C0_BLOCKS as f64).sqrt(),
        diversity: g * c0.powf(alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, t: f64) -> ModelParams {
        ModelParams::new(a, t).unwrap()
    }

    #[test]
    fn power_law_half_matches_zeta_two() {
        let s = FrequencySource::power_law(0.5).unwrap();
        let c0 = 6.0 / std::f64::consts::PI.powi(2);
        assert!((s.power_law_c0().unwrap() - c0).abs() < 1e-14);
        assert!((s.frequencies()[0] - c0).abs() < 1e-14);
        assert!((s.frequencies()[2] - c0 / 9.0).abs() < 1e-15);
        assert!((s.prefix.tails[0] - 1.0).abs() < 1e-12);
        let head: f64 = s.frequencies()[..1_000_000].iter().sum();
        assert!(head > 0.999_999);
        assert!(s.frequencies().windows(2).all(|w| w[0] > w[1]));
        assert!(FrequencySource::power_law(1.0).is_err());
        assert!(FrequencySource::power_law(0.0).is_err());
    }

    #[test]
    fn stick_breaking_mass_accounting() {
        let mut s = FrequencySource::stick_breaking(&params(0.5, 0.5), 1);
        s.extend_to(1000);
        let sum: f64 = s.frequencies().iter().sum();
        assert!(sum < 1.0);
        assert!((sum + s.tail_mass() - 1.0).abs() < 1e-12);
        let mut t = FrequencySource::stick_breaking(&params(0.5, 0.5), 1);
        t.extend_to(1000);
        assert_eq!(s.frequencies(), t.frequencies());
    }

    #[test]
    fn one_ball() {
        let mut s = FrequencySource::power_law(0.5).unwrap();
        let t = sample_urn(&mut s, 1, &Checkpoints::final_only(), 3).unwrap();
        assert_eq!(t.final_counts().pairs(), &[(1, 1)]);
        assert_eq!(t.blocks, vec![1]);
    }

    #[test]
    fn beyond_cap_sampler_respects_cut() {
        let mut rng = seed::rng_from_seed(4);
        for _ in 0..1000 {
            assert!(power_law_beyond(2.0, 1000, &mut rng) > 1000);
        }
    }

    #[test]
    fn beyond_cap_sampler_law() {
        // P(j = cut+1 | j > cut) = (cut+1)^{-s} / ζ(s, cut+1)
        let (s, cut) = (2.0, 10u64);
        let want = (cut as f64 + 1.0).powf(-s) / hurwitz_zeta(s, cut as f64 + 1.0);
        let mut rng = seed::rng_from_seed(8);
        let trials = 200_000;
        let hits = (0..trials)
            .filter(|_| power_law_beyond(s, cut, &mut rng) == cut + 1)
            .count() as f64;
        let p = hits / trials as f64;
        let se = (want * (1.0 - want) / trials as f64).sqrt();
        assert!((p - want).abs() < 4.0 * se, "{p} vs {want}");
    }

    #[test]
    fn occupancy_mean_small_cases() {
        let mut s = FrequencySource::power_law(0.5).unwrap();
        let v = conditional_occupancy_mean(&mut s, 1, 1, 1e-10).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
        let c0 = 6.0 / std::f64::consts::PI.powi(2);
        let want = c0 * c0 * std::f64::consts::PI.powi(4) / 90.0;
        let v = conditional_occupancy_mean(&mut s, 2, 2, 1e-12).unwrap();
        assert!((v - want).abs() < 1e-11, "{v} vs {want}");
        assert!(conditional_occupancy_mean(&mut s, 2, 2, 0.0).is_err());
        let a = conditional_occupancy_mean(&mut s, 3, 3, 1e-12).unwrap();
        let b = conditional_occupancy_mean(&mut s, 4, 4, 1e-12).unwrap();
        assert!(a > b);
    }

    #[test]
    fn expected_occupied_matches_single_j_sum() {
        let mut s = FrequencySource::power_law(0.5).unwrap();
        let n = 50;
        let total = expected_occupied(&mut s, n, 1e-9).unwrap();
        let by_j: f64 = (1..=n)
            .map(|j| conditional_occupancy_mean(&mut s, n, j, 1e-11).unwrap())
            .sum();
        assert!((total - by_j).abs() < 1e-8, "{total} vs {by_j}");
    }

    #[test]
    fn stick_breaking_centering_errors_instead_of_guessing() {
        let mut s = FrequencySource::stick_breaking(&params(0.5, 0.5), 2).with_max_depth(2000);
        assert!(matches!(expected_occupied(&mut s, 100_000, 1e-6), Err(Error::Numerics(_))));
    }

    #[test]
    fn c0_estimate() {
        let mut s = FrequencySource::power_law(0.5).unwrap();
        let e = estimate_c0(&mut s, 10).unwrap();
        assert_eq!(e.c0, 6.0 / std::f64::consts::PI.powi(2));
        let mut s = FrequencySource::stick_breaking(&params(0.5, 0.5), 3);
        assert!(matches!(estimate_c0(&mut s, 10), Err(Error::Estimation(_))));
        let a = estimate_c0(&mut s, 20_000).unwrap();
        let b = estimate_c0(&mut s, 40_000).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.c0 - b.c0).abs() < 3.0 * se, "{a:?} {b:?}");
    }

    #[test]
    fn split_and_per_ball_agree_on_invariants() {
        let cks = Checkpoints::new(vec![0.25, 0.5, 1.0]).unwrap();
        let mut s = FrequencySource::power_law(0.5).unwrap();
        for seed in 0..5 {
            for t in [
                sample_urn(&mut s, 5000, &cks, seed).unwrap(),
                sample_urn_split(&mut s, 5000, &cks, seed).unwrap(),
            ] {
                for (c, (&m, &k)) in t.counts.iter().zip(t.sizes.iter().zip(&t.blocks)) {
                    assert_eq!(c.size(), m as u64);
                    assert_eq!(c.blocks(), k);
                }
            }
        }
        let mut g = FrequencySource::stick_breaking(&params(0.5, 0.5), 1).with_max_depth(50);
        let t = sample_urn_split(&mut g, 20_000, &cks, 1).unwrap();
        assert_eq!(t.final_counts().size(), 20_000);
        assert!(t.blocks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn frozen_replica_shares_prefix() {
        let mut s = FrequencySource::stick_breaking(&params(0.5, 0.5), 1).with_max_depth(5000);
        assert!(s.replica().is_err());
        s.freeze();
        let r = s.replica().unwrap();
        assert!(Arc::ptr_eq(&s.prefix, &r.prefix));
        assert_eq!(r.generated(), 5000);
    }
}
