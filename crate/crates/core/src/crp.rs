//! Sequential (α,θ)- and (0,θ)-Chinese restaurant processes.
//!
//! Customer `n+1` joins table `i` with probability `(n_i − α)/(n + θ)` or opens
//! a new table with probability `(θ + αk)/(n + θ)`. When tracking the
//! permutation, a customer joining an occupied round table sits immediately
//! after a uniformly chosen member, which is the same as a uniform choice among
//! the `n_i` gaps of the cycle.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AlphaTheta,
    ZeroTheta,
}

/// Validated seating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    alpha: f64,
    theta: f64,
    variant: Variant,
}

impl ModelParams {
    pub fn new(alpha: f64, theta: f64) -> Result<Self> {
        if !alpha.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "alpha={alpha}, theta={theta} must be finite"
            )));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParams(format!("alpha={alpha} outside [0, 1)")));
        }
        if theta <= -alpha {
            return Err(Error::InvalidParams(format!(
                "theta={theta} must exceed -alpha={}",
                -alpha
            )));
        }
        let variant = if alpha == 0.0 {
            // theta > -0 already enforced above
            Variant::ZeroTheta
        } else {
            Variant::AlphaTheta
        };
        Ok(Self { alpha, theta, variant })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

/// Sparse cycle-count vector: `(j, C_j)` pairs for nonzero counts, sorted by `j`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleCounts(Vec<(usize, u64)>);

impl CycleCounts {
    pub fn from_pairs(mut pairs: Vec<(usize, u64)>) -> Self {
        pairs.retain(|&(j, c)| c > 0 && j > 0);
        pairs.sort_unstable_by_key(|&(j, _)| j);
        // merge duplicates
        let mut out: Vec<(usize, u64)> = Vec::with_capacity(pairs.len());
        for (j, c) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += c,
                _ => out.push((j, c)),
            }
        }
        Self(out)
    }

    /// From a dense histogram indexed by length (index 0 ignored).
    pub fn from_dense(hist: &[u64]) -> Self {
        Self(
            hist.iter()
                .enumerate()
                .skip(1)
                .filter(|&(_, &c)| c > 0)
                .map(|(j, &c)| (j, c))
                .collect(),
        )
    }

    pub fn from_sizes(sizes: &[usize]) -> Self {
        Self::from_pairs(sizes.iter().map(|&s| (s, 1)).collect())
    }

    pub fn get(&self, j: usize) -> u64 {
        self.0
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.0.iter().copied()
    }

    pub fn pairs(&self) -> &[(usize, u64)] {
        &self.0
    }

    /// `Σ_j j·C_j`.
    pub fn size(&self) -> u64 {
        self.0.iter().map(|&(j, c)| j as u64 * c).sum()
    }

    /// `Σ_j C_j`.
    pub fn blocks(&self) -> u64 {
        self.0.iter().map(|&(_, c)| c).sum()
    }

    /// Dense vector `(C_1, ..., C_len)`.
    pub fn to_dense(&self, len: usize) -> Vec<u64> {
        let mut v = vec![0; len];
        for &(j, c) in &self.0 {
            if j <= len {
                v[j - 1] = c;
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
struct CyclePerm {
    // successor[c] = σ(c), customers labelled from 0
    successor: Vec<usize>,
    members: Vec<Vec<usize>>,
}

/// State of the restaurant after `n` customers.
#[derive(Debug, Clone)]
pub struct SeatingState {
    n: usize,
    table_sizes: Vec<usize>,
    // One entry per customer beyond the first at each table: sampling a
    // uniform entry picks table i with probability (n_i − 1)/(n − k).
    extra_seats: Vec<u32>,
    histogram: Vec<u64>,
    perm: Option<CyclePerm>,
}

impl SeatingState {
    /// One customer at one table.
    pub fn new(track_permutation: bool) -> Self {
        Self {
            n: 1,
            table_sizes: vec![1],
            extra_seats: Vec::new(),
            histogram: vec![0, 1],
            perm: track_permutation.then(|| CyclePerm {
                successor: vec![0],
                members: vec![vec![0]],
            }),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tables(&self) -> usize {
        self.table_sizes.len()
    }

    /// Table sizes in order of appearance.
    pub fn table_sizes(&self) -> &[usize] {
        &self.table_sizes
    }

    pub fn cycle_counts(&self) -> CycleCounts {
        CycleCounts::from_dense(&self.histogram)
    }

    /// `σ` as a successor vector with 0-based labels, if tracked.
    pub fn permutation(&self) -> Option<&[usize]> {
        self.perm.as_ref().map(|p| p.successor.as_slice())
    }

    /// Placement probabilities for customer `n+1`: one entry per table in order
    /// of appearance, then the new table.
    pub fn placement_probabilities(&self, params: &ModelParams) -> Vec<f64> {
        let denom = self.n as f64 + params.theta;
        let k = self.tables() as f64;
        let mut p: Vec<f64> = self
            .table_sizes
            .iter()
            .map(|&s| (s as f64 - params.alpha) / denom)
            .collect();
        p.push((params.theta + params.alpha * k) / denom);
        p
    }

    /// Seat customer `n+1` using one uniform draw for the table and, when the
    /// permutation is tracked and the table is occupied, one more for the seat.
    ///
    /// The mass `n + θ` is laid out as: `n − k` for the extra-seat list,
    /// `(1 − α)k` split evenly across tables, then `θ + αk` for a new table.
    pub fn seat_next<R: Rng + ?Sized>(&mut self, params: &ModelParams, rng: &mut R) {
        let n = self.n as f64;
        let k = self.tables();
        let x = rng.random::<f64>() * (n + params.theta);
        let extra = self.extra_seats.len() as f64;
        let table = if x < extra {
            Some(self.extra_seats[(x as usize).min(self.extra_seats.len() - 1)] as usize)
        } else {
            let shared = (1.0 - params.alpha) * k as f64;
            let y = x - extra;
            if y < shared {
                Some(((y / (1.0 - params.alpha)) as usize).min(k - 1))
            } else {
                None
            }
        };
        let customer = self.n;
        match table {
            Some(i) => {
                let s = self.table_sizes[i];
                self.table_sizes[i] = s + 1;
                self.extra_seats.push(i as u32);
                self.histogram[s] -= 1;
                if self.histogram.len() <= s + 1 {
                    self.histogram.resize(s + 2, 0);
                }
                self.histogram[s + 1] += 1;
                if let Some(perm) = self.perm.as_mut() {
                    let members = &mut perm.members[i];
                    let after = members[rng.random_range(0..members.len())];
                    let next = perm.successor[after];
                    perm.successor[after] = customer;
                    perm.successor.push(next);
                    members.push(customer);
                }
            }
            None => {
                self.table_sizes.push(1);
                self.histogram[1] += 1;
                if let Some(perm) = self.perm.as_mut() {
                    perm.successor.push(customer);
                    perm.members.push(vec![customer]);
                }
            }
        }
        self.n += 1;
    }
}

/// Sorted checkpoint fractions in `(0, 1]` containing `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoints(Vec<f64>);

impl Checkpoints {
    pub fn new(ts: Vec<f64>) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::InvalidArgument("no checkpoints given".into()));
        }
        for w in ts.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "checkpoints must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if ts.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::InvalidArgument("checkpoints must lie in (0, 1]".into()));
        }
        if *ts.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument("checkpoints must contain 1".into()));
        }
        Ok(Self(ts))
    }

    pub fn final_only() -> Self {
        Self(vec![1.0])
    }

    pub fn fractions(&self) -> &[f64] {
        &self.0
    }

    /// `⌊n t⌋` for each checkpoint. A relative guard of `1e-12` keeps products
    /// like `100 × 0.29` from rounding down past the intended integer.
    pub fn sizes(&self, n: usize) -> Vec<usize> {
        self.0.iter().map(|&t| floor_size(n, t)).collect()
    }
}

pub fn floor_size(n: usize, t: f64) -> usize {
    if t >= 1.0 {
        return n;
    }
    let x = n as f64 * t;
    ((x * (1.0 + 1e-12)).floor() as usize).min(n)
}

/// Cycle counts and block counts of one evolving permutation at `⌊nt⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTrajectory {
    pub n: usize,
    pub checkpoints: Vec<f64>,
    pub sizes: Vec<usize>,
    pub counts: Vec<CycleCounts>,
    pub blocks: Vec<u64>,
}

impl CycleTrajectory {
    pub fn final_counts(&self) -> &CycleCounts {
        self.counts.last().expect("trajectory has at least one checkpoint")
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if n > u32::MAX as usize {
        return Err(Error::ResourceGuard(format!(
            "n = {n} exceeds the table-index range (u32)"
        )));
    }
    Ok(())
}

/// Run the seating process to size `n` with a stream seeded by `seed`.
pub fn simulate_crp(
    params: &ModelParams,
    n: usize,
    checkpoints: &Checkpoints,
    seed: u64,
) -> Result<CycleTrajectory> {
    let mut rng = seed::rng_from_seed(seed);
    simulate_crp_with(params, n, checkpoints, &mut rng)
}

pub fn simulate_crp_with<R: Rng + ?Sized>(
    params: &ModelParams,
    n: usize,
    checkpoints: &Checkpoints,
    rng: &mut R,
) -> Result<CycleTrajectory> {
    check_size(n)?;
    let sizes = checkpoints.sizes(n);
    let mut counts = Vec::with_capacity(sizes.len());
    let mut blocks = Vec::with_capacity(sizes.len());
    let mut state = SeatingState::new(false);
    let mut next = 0;
    while next < sizes.len() && sizes[next] == 0 {
        counts.push(CycleCounts::default());
        blocks.push(0);
        next += 1;
    }
    loop {
        while next < sizes.len() && sizes[next] == state.n {
            counts.push(state.cycle_counts());
            blocks.push(state.tables() as u64);
            next += 1;
        }
        if state.n >= n {
            break;
        }
        state.seat_next(params, rng);
    }
    Ok(CycleTrajectory {
        n,
        checkpoints: checkpoints.fractions().to_vec(),
        sizes,
        counts,
        blocks,
    })
}

/// Seat `n` customers tracking the full permutation (for small-`n` spectral work).
pub fn simulate_permutation<R: Rng + ?Sized>(
    params: &ModelParams,
    n: usize,
    rng: &mut R,
) -> Result<SeatingState> {
    check_size(n)?;
    let mut state = SeatingState::new(true);
    while state.n < n {
        state.seat_next(params, rng);
    }
    Ok(state)
}

/// Exact law of `(C_{n,1}, ..., C_{n,n})`, keyed by the dense count vector.
pub type CycleLaw = BTreeMap<Vec<u64>, f64>;

pub const ENUMERATION_LIMIT: usize = 10;

/// Exhaustive law of the cycle-count vector at size `n ≤ 10`.
///
/// Works over table-size multisets (seat positions never change counts).
pub fn enumerate_crp(params: &ModelParams, n: usize) -> Result<CycleLaw> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if n > ENUMERATION_LIMIT {
        return Err(Error::ResourceGuard(format!(
            "enumeration limited to n <= {ENUMERATION_LIMIT}, got {n}"
        )));
    }
    // key: table sizes sorted descending
    let mut layer: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    layer.insert(vec![1], 1.0);
    for m in 1..n {
        let denom = m as f64 + params.theta;
        let mut next: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (sizes, &p) in &layer {
            let k = sizes.len() as f64;
            let mut i = 0;
            while i < sizes.len() {
                let s = sizes[i];
                let mult = sizes[i..].iter().take_while(|&&x| x == s).count();
                let mut grown = sizes.clone();
                grown[i] = s + 1;
                grown.sort_unstable_by(|a, b| b.cmp(a));
                *next.entry(grown).or_default() +=
                    p * mult as f64 * (s as f64 - params.alpha) / denom;
                i += mult;
            }
            let mut opened = sizes.clone();
            opened.push(1);
            *next.entry(opened).or_default() += p * (params.theta + params.alpha * k) / denom;
        }
        layer = next;
    }
    Ok(layer
        .into_iter()
        .map(|(sizes, p)| (CycleCounts::from_sizes(&sizes).to_dense(n), p))
        .collect())
}

/// `E|Π_n|` from `E|Π_{m+1}| = E|Π_m| + (θ + α E|Π_m|)/(m + θ)`, `E|Π_1| = 1`.
pub fn block_count_mean(params: &ModelParams, n: usize) -> f64 {
    let mut mean = 1.0;
    for m in 1..n {
        mean += (params.theta + params.alpha * mean) / (m as f64 + params.theta);
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: f64, t: f64) -> ModelParams {
        ModelParams::new(a, t).unwrap()
    }

    #[test]
    fn params_validation() {
        assert_eq!(p(0.5, 0.5).variant(), Variant::AlphaTheta);
        assert!(ModelParams::new(0.5, -0.6).is_err());
        assert_eq!(p(0.0, 1.0).variant(), Variant::ZeroTheta);
        assert!(ModelParams::new(0.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1.0).is_err());
        assert!(ModelParams::new(-0.1, 1.0).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn new_table_probability_after_one_customer() {
        let s = SeatingState::new(false);
        let probs = s.placement_probabilities(&p(0.5, 0.5));
        assert!((probs[1] - 2.0 / 3.0).abs() < 1e-15);
        let probs = s.placement_probabilities(&p(0.0, 1.0));
        assert!((probs[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn placement_probabilities_sum_to_one() {
        let params = p(0.3, 1.7);
        let mut rng = seed::rng_from_seed(3);
        let mut s = SeatingState::new(false);
        for _ in 0..200 {
            let total: f64 = s.placement_probabilities(&params).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            s.seat_next(&params, &mut rng);
        }
    }

    #[test]
    fn single_customer_trajectory() {
        let t = simulate_crp(&p(0.5, 0.5), 1, &Checkpoints::final_only(), 9).unwrap();
        assert_eq!(t.final_counts().pairs(), &[(1, 1)]);
        assert_eq!(t.blocks, vec![1]);
    }

    #[test]
    fn permutation_cycles_match_tables() {
        let params = p(0.4, 0.9);
        let mut rng = seed::rng_from_seed(5);
        let s = simulate_permutation(&params, 40, &mut rng).unwrap();
        let succ = s.permutation().unwrap();
        let mut seen = vec![false; succ.len()];
        let mut lengths = Vec::new();
        for start in 0..succ.len() {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut c = start;
            while !seen[c] {
                seen[c] = true;
                c = succ[c];
                len += 1;
            }
            lengths.push(len);
        }
        assert_eq!(CycleCounts::from_sizes(&lengths), s.cycle_counts());
    }

    #[test]
    fn enumeration_small_cases() {
        let law = enumerate_crp(&p(0.5, 0.5), 2).unwrap();
        assert!((law[&vec![2, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((law[&vec![0, 1]] - 1.0 / 3.0).abs() < 1e-15);
        let law = enumerate_crp(&p(0.0, 1.0), 2).unwrap();
        assert!((law[&vec![2, 0]] - 0.5).abs() < 1e-15);
        let law = enumerate_crp(&p(0.3, 0.0), 1).unwrap();
        assert_eq!(law.len(), 1);
        assert_eq!(law[&vec![1]], 1.0);
        assert!(matches!(enumerate_crp(&p(0.3, 0.0), 11), Err(Error::ResourceGuard(_))));
    }

    #[test]
    fn block_mean_recursion() {
        assert_eq!(block_count_mean(&p(0.5, 0.5), 1), 1.0);
        assert!((block_count_mean(&p(0.5, 0.0), 2) - 1.5).abs() < 1e-15);
        assert!((block_count_mean(&p(0.5, 0.5), 2) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_validation_and_sizes() {
        assert!(Checkpoints::new(vec![0.5]).is_err());
        assert!(Checkpoints::new(vec![0.5, 0.25, 1.0]).is_err());
        assert!(Checkpoints::new(vec![0.0, 1.0]).is_err());
        let c = Checkpoints::new(vec![0.29, 1.0]).unwrap();
        assert_eq!(c.sizes(100), vec![29, 100]);
    }
}
