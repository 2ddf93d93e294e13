//! Cycle-count formulas against direct matrix computations.

mod common;

use common::{det_elimination, walk_cycles};
use crp_spectra::crp::{simulate_permutation, CycleCounts, ModelParams};
use crp_spectra::seed::stream;
use crp_spectra::spectral::{
    eigenvalue_multiplicity, log_char_poly, weighted_sum, weights_from_function, ComplexPoint, WeightSeq,
};
use num_complex::Complex64;
use std::f64::consts::PI;

fn permutations(count: u64) -> Vec<(Vec<usize>, CycleCounts)> {
    let params = [(0.5, 0.5), (0.0, 1.0), (0.8, -0.2), (0.3, 2.0)];
    (0..count)
        .map(|r| {
            let (a, t) = params[r as usize % params.len()];
            let p = ModelParams::new(a, t).unwrap();
            let n = 1 + (r as usize * 7) % 64;
            let s = simulate_permutation(&p, n, &mut stream(77, r)).unwrap();
            (s.permutation().unwrap().to_vec(), s.cycle_counts())
        })
        .collect()
}

#[test]
fn counts_agree_with_walked_cycles() {
    for (succ, counts) in permutations(50) {
        let mut lens = walk_cycles(&succ);
        lens.sort_unstable();
        assert_eq!(CycleCounts::from_sizes(&lens), counts);
    }
}

#[test]
fn determinant_inside_and_outside() {
    for (succ, counts) in permutations(30) {
        for z in [Complex64::new(0.3, 0.4), Complex64::new(-1.7, 0.9)] {
            let want = det_elimination(&succ, z);
            let got = log_char_poly(&counts, &ComplexPoint::new(z).unwrap()).exp();
            assert!((got - want).norm() <= 1e-9 * want.norm(), "{z}: {got} vs {want}");
        }
    }
}

#[test]
fn traces_of_powers() {
    // tr M^k = #{i : σ^k(i) = i} = Σ_{j | k} j C_j
    for (succ, counts) in permutations(20) {
        for k in 1..=12usize {
            let fixed = (0..succ.len())
                .filter(|&i| {
                    let mut x = i;
                    for _ in 0..k {
                        x = succ[x];
                    }
                    x == i
                })
                .count() as u64;
            let formula: u64 = counts.iter().filter(|(j, _)| k % j == 0).map(|(j, c)| j as u64 * c).sum();
            assert_eq!(fixed, formula);
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[test]
fn multiplicities_on_root_grids() {
    for (succ, counts) in permutations(40) {
        let n = succ.len();
        // the n-th-root grid only sees gcd(j, n) eigenvalues of each j-cycle
        let on_n: u64 = (0..n).map(|p| eigenvalue_multiplicity(&counts, p, n).unwrap()).sum();
        let seen: u64 = counts.iter().map(|(j, c)| gcd(j, n) as u64 * c).sum();
        assert_eq!(on_n, seen);
        assert_eq!(eigenvalue_multiplicity(&counts, 0, n).unwrap(), counts.blocks());
        // on the lcm grid every eigenvalue is a grid point
        let l = counts.iter().fold(1usize, |l, (j, _)| l / gcd(l, j) * j);
        let on_l: u64 = (0..l).map(|p| eigenvalue_multiplicity(&counts, p, l).unwrap()).sum();
        assert_eq!(on_l, n as u64);
    }
}

#[test]
fn linear_statistic_identity() {
    // Σ_λ f(arg λ / 2π) = n ∫ f + Σ_j a_j(f) C_j, eigenvalues from walked cycles
    let f = |x: f64| (2.0 * PI * x).cos() + x * x;
    let integral = 1.0 / 3.0;
    for (succ, counts) in permutations(40) {
        let n = succ.len();
        let direct: f64 = walk_cycles(&succ)
            .iter()
            .map(|&j| (0..j).map(|k| f(k as f64 / j as f64)).sum::<f64>())
            .sum();
        let table: Vec<Complex64> = (1..=n)
            .map(|j| Complex64::new(weights_from_function(f, Some(integral), j).unwrap(), 0.0))
            .collect();
        let w = WeightSeq::table(table, Complex64::new(0.0, 0.0));
        let via = n as f64 * integral + weighted_sum(&counts, &w).re;
        assert!((direct - via).abs() <= 1e-9 * direct.abs().max(1.0));
    }
}

#[test]
fn arc_counts_match_angles() {
    let w = WeightSeq::arc(0.1, 0.45).unwrap();
    for (succ, counts) in permutations(40) {
        let n = succ.len();
        let inside: usize = walk_cycles(&succ)
            .iter()
            .map(|&j| (0..j).filter(|&k| (0.1..0.45).contains(&(k as f64 / j as f64))).count())
            .sum();
        let via = n as f64 * 0.35 + weighted_sum(&counts, &w).re;
        assert!((inside as f64 - via).abs() < 1e-9);
    }
}
