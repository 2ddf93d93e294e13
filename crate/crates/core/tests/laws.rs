//! Sampler laws against exact enumeration and against each other.

use std::collections::BTreeMap;

use crp_spectra::crp::{enumerate_crp, simulate_crp, Checkpoints, ModelParams};
use crp_spectra::seed::derive_seed;
use crp_spectra::stats::{bin_joint, chi2_two_sample, ks_two_sample};
use crp_spectra::urn::{sample_urn, sample_urn_split, FrequencySource};

fn total_variation(emp: &BTreeMap<Vec<u64>, f64>, exact: &BTreeMap<Vec<u64>, f64>) -> f64 {
    let mut keys: Vec<&Vec<u64>> = emp.keys().chain(exact.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (emp.get(*k).unwrap_or(&0.0) - exact.get(*k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

fn histogram(samples: impl Iterator<Item = Vec<u64>>, runs: usize) -> BTreeMap<Vec<u64>, f64> {
    let mut h = BTreeMap::new();
    for s in samples {
        *h.entry(s).or_insert(0.0) += 1.0 / runs as f64;
    }
    h
}

#[test]
fn crp_law_matches_enumeration() {
    let params = ModelParams::new(0.5, 0.5).unwrap();
    let runs = 20_000;
    for n in [3, 5] {
        let exact = enumerate_crp(&params, n).unwrap();
        let emp = histogram(
            (0..runs as u64).map(|r| {
                let t = simulate_crp(&params, n, &Checkpoints::final_only(), derive_seed(11, r)).unwrap();
                t.final_counts().to_dense(n)
            }),
            runs,
        );
        assert!(total_variation(&emp, &exact) < 0.02);
    }
}

#[test]
fn urn_law_matches_crp_under_fresh_sticks() {
    // two balls share an urn with probability Σ E P_l² = (1 − α)/(1 + θ)
    let params = ModelParams::new(0.5, 0.5).unwrap();
    let runs = 20_000;
    let n = 5;
    let exact = enumerate_crp(&params, n).unwrap();
    for split in [false, true] {
        let mut pair = 0usize;
        let emp = histogram(
            (0..runs as u64).map(|r| {
                let mut src = FrequencySource::stick_breaking(&params, derive_seed(5, r));
                let cks = Checkpoints::new(vec![0.4, 1.0]).unwrap();
                let seed = derive_seed(6, r);
                let t = if split {
                    sample_urn_split(&mut src, n, &cks, seed).unwrap()
                } else {
                    sample_urn(&mut src, n, &cks, seed).unwrap()
                };
                if t.counts[0].get(2) == 1 {
                    pair += 1;
                }
                t.final_counts().to_dense(n)
            }),
            runs,
        );
        assert!(total_variation(&emp, &exact) < 0.02, "split={split}");
        let p = pair as f64 / runs as f64;
        let se = (p * (1.0 - p) / runs as f64).sqrt();
        assert!((p - 1.0 / 3.0).abs() < 4.0 * se, "split={split}: {p}");
    }
}

#[test]
fn split_sampler_matches_single_ball_sampler() {
    let src = FrequencySource::power_law(0.5).unwrap();
    let n = 3000;
    let runs = 3000;
    let cks = Checkpoints::final_only();
    let draw = |split: bool, r: u64| {
        let mut s = src.replica().unwrap();
        let seed = derive_seed(if split { 21 } else { 22 }, r);
        let t = if split {
            sample_urn_split(&mut s, n, &cks, seed).unwrap()
        } else {
            sample_urn(&mut s, n, &cks, seed).unwrap()
        };
        let c = t.final_counts();
        (vec![c.get(1), c.get(2), c.get(3)], t.blocks[0] as f64)
    };
    let a: Vec<_> = (0..runs).map(|r| draw(true, r)).collect();
    let b: Vec<_> = (0..runs).map(|r| draw(false, r)).collect();
    let va: Vec<Vec<u64>> = a.iter().map(|x| x.0.clone()).collect();
    let vb: Vec<Vec<u64>> = b.iter().map(|x| x.0.clone()).collect();
    let bins = bin_joint(&va, &vb, 4, 10).unwrap();
    assert!(chi2_two_sample(&bins.a, &bins.b).unwrap().p_value > 1e-3);
    let ka: Vec<f64> = a.iter().map(|x| x.1).collect();
    let kb: Vec<f64> = b.iter().map(|x| x.1).collect();
    assert!(ks_two_sample(&ka, &kb).unwrap().p_value > 1e-3);
}

#[test]
fn frozen_replicas_share_frequencies() {
    let params = ModelParams::new(0.4, 1.0).unwrap();
    let mut src = FrequencySource::stick_breaking(&params, 9).with_max_depth(4096);
    assert!(src.replica().is_err());
    src.freeze();
    let a = src.replica().unwrap();
    assert_eq!(a.frequencies(), src.frequencies());
    let cks = Checkpoints::final_only();
    let mut r1 = src.replica().unwrap();
    let mut r2 = src.replica().unwrap();
    let t1 = sample_urn_split(&mut r1, 10_000, &cks, 3).unwrap();
    let t2 = sample_urn_split(&mut r2, 10_000, &cks, 3).unwrap();
    assert_eq!(t1, t2);
}
