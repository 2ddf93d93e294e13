//! Limit-law quadrature against closed forms and series.

use crp_spectra::limits::{
    cov_eta_quadrature, cov_eta_series, cov_zalpha, cov_zalpha_grid, cov_zj, CovMatrix,
};
use crp_spectra::special::ln_gamma;

mod common;
use common::zj_closed;
use crp_spectra::spectral::WeightSeq;
use num_complex::Complex64;

#[test]
fn zj_quadrature_matches_closed_form_at_unit_time() {
    for alpha in [0.3, 0.5, 0.7] {
        for j in 1..=6u64 {
            for k in 1..=6u64 {
                let q = cov_zj(alpha, j as usize, k as usize, 1.0, 1.0, 1e-11).unwrap();
                let c = zj_closed(alpha, j, k, 1.0, 1.0);
                assert!((q - c).abs() <= 1e-9, "alpha={alpha} j={j} k={k}: {q} vs {c}");
            }
        }
    }
}

#[test]
fn zj_known_values() {
    assert!((zj_closed(0.5, 1, 1, 1.0, 1.0) - 0.729_562_658_288_320_5).abs() < 1e-14);
    assert!((zj_closed(0.5, 1, 2, 1.0, 1.0) + 0.058_749_100_186_664_08).abs() < 1e-14);
}

#[test]
fn zj_quadrature_matches_closed_form_off_diagonal_times() {
    for (s, t) in [(0.25, 1.0), (0.5, 1.0), (0.3, 0.7)] {
        for j in 1..=4u64 {
            for k in 1..=4u64 {
                let q = cov_zj(0.5, j as usize, k as usize, s, t, 1e-11).unwrap();
                let c = zj_closed(0.5, j, k, s, t);
                assert!((q - c).abs() <= 1e-9, "s={s} t={t} j={j} k={k}: {q} vs {c}");
            }
        }
    }
}

#[test]
fn constant_weight_grid() {
    let g = ln_gamma(0.5).exp();
    let m = cov_zalpha_grid(0.5, &WeightSeq::constant(1.0), &[0.25, 0.5, 1.0], 1e-10).unwrap();
    let times = [0.25f64, 0.5, 1.0];
    for i in 0..3 {
        for j in 0..3 {
            let (s, t) = (times[i.min(j)], times[i.max(j)]);
            let want = g * ((s + t).powf(0.5) - t.powf(0.5));
            assert!((m.values[i][j] - want).abs() < 1e-9);
        }
    }
    assert!(m.min_eigenvalue > 0.0);
    // variance grows with t
    assert!(m.values[0][0] < m.values[1][1] && m.values[1][1] < m.values[2][2]);
}

#[test]
fn zj_matrices_are_psd() {
    for alpha in [0.3, 0.5, 0.7] {
        let d = 5;
        let mut v = vec![vec![0.0; d]; d];
        for j in 0..d {
            for k in j..d {
                let c = cov_zj(alpha, j + 1, k + 1, 1.0, 1.0, 1e-11).unwrap();
                v[j][k] = c;
                v[k][j] = c;
            }
        }
        let m = CovMatrix::new((1..=d).map(|j| j.to_string()).collect(), v, vec![vec![0.0; d]; d], 1e-11)
            .unwrap();
        assert!(m.min_eigenvalue >= -1e-10);
    }
}

#[test]
fn eta_series_quadrature_and_double_sum() {
    let points = [
        Complex64::new(0.3, 0.0),
        Complex64::from_polar(0.5, std::f64::consts::FRAC_PI_4),
        Complex64::new(-0.6, 0.0),
    ];
    for alpha in [0.3, 0.5, 0.7] {
        let jmax = 60;
        let mut zj = vec![vec![0.0; jmax + 1]; jmax + 1];
        for j in 1..=jmax {
            for k in j..=jmax {
                let c = cov_zj(alpha, j, k, 1.0, 1.0, 1e-12).unwrap();
                zj[j][k] = c;
                zj[k][j] = c;
            }
        }
        for z in points {
            for w in points {
                let series = cov_eta_series(alpha, z, w, 1e-9).unwrap();
                let quad = cov_eta_quadrature(alpha, z, w, 1.0, 1.0, 1e-9).unwrap();
                let a = WeightSeq::log_one_minus(z).unwrap();
                let b = WeightSeq::log_one_minus(w).unwrap();
                let mut double = Complex64::new(0.0, 0.0);
                for j in 1..=jmax {
                    for k in 1..=jmax {
                        double += a.eval(j) * b.eval(k) * zj[j][k];
                    }
                }
                assert!((series - quad).norm() < 1e-5, "{alpha} {z} {w}: {series} {quad}");
                assert!((series - double).norm() < 1e-5, "{alpha} {z} {w}: {series} {double}");
            }
        }
    }
}

#[test]
fn zalpha_constant_closed_form() {
    let g = ln_gamma(0.5).exp();
    let v = cov_zalpha(0.5, &WeightSeq::constant(1.0), 1.0, 1.0, 1e-11).unwrap();
    assert!((v - g * (2f64.sqrt() - 1.0)).abs() < 1e-10);
}
