//! Long-run covariance estimation with the Bartlett kernel.
//!
//! `Ω̂ = Σ̂₀ + Σ_{l=1..L} k(l/(L+1)) (Σ̂_l + Σ̂_lᵀ)` with the triangular weight
//! `k(x) = 1 - |x|` and autocovariances normalized by `N` (not `N - l`), which
//! keeps the estimate positive semidefinite.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::timeseries::{sample_mean, Samples};

#[derive(Debug, Clone, PartialEq)]
pub struct LongRunCov {
    pub omega: DMatrix<f64>,
    pub bandwidth: usize,
    pub n_used: usize,
}

impl LongRunCov {
    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// `Ω̂^{-1}`, ridge-regularized if numerically singular.
    pub fn inverse(&self) -> (DMatrix<f64>, bool) {
        linalg::regularized_inverse(&self.omega)
    }

    /// `Ω̂^{-1/2}` through the symmetric eigendecomposition.
    pub fn inv_sqrt(&self) -> (DMatrix<f64>, bool) {
        linalg::regularized_inv_sqrt(&self.omega)
    }
}

/// Bartlett (triangular) kernel.
pub fn bartlett_weight(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        1.0 - x.abs()
    } else {
        0.0
    }
}

/// `floor(log10(N))`.
pub fn bartlett_bandwidth(n: usize) -> usize {
    assert!(n >= 1, "bandwidth needs N >= 1");
    // Integer digit count avoids log10 round-off at exact powers of ten.
    let mut l = 0;
    let mut p = 10usize;
    while p <= n {
        l += 1;
        match p.checked_mul(10) {
            Some(next) => p = next,
            None => break,
        }
    }
    l
}

/// Empirical autocovariance at `lag` with divisor `N`.
pub fn autocov<S: Samples + ?Sized>(s: &S, lag: usize) -> Result<DMatrix<f64>> {
    let n = s.len();
    if lag >= n {
        return Err(Error::invalid(format!("lag {lag} must be < N = {n}")));
    }
    let mean = sample_mean(s);
    Ok(autocov_centered(s, &mean, lag))
}

fn autocov_centered<S: Samples + ?Sized>(s: &S, mean: &[f64], lag: usize) -> DMatrix<f64> {
    let n = s.len();
    let d = s.dim();
    let mut acc = DMatrix::zeros(d, d);
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for t in lag..n {
        for ((ai, x), m) in a.iter_mut().zip(s.row(t)).zip(mean) {
            *ai = x - m;
        }
        for ((bi, x), m) in b.iter_mut().zip(s.row(t - lag)).zip(mean) {
            *bi = x - m;
        }
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += a[i] * b[j];
            }
        }
    }
    acc / n as f64
}

/// Bartlett long-run covariance with bandwidth `l`.
pub fn bartlett_lrv<S: Samples + ?Sized>(s: &S, l: usize) -> Result<LongRunCov> {
    let n = s.len();
    if l >= n {
        return Err(Error::invalid(format!("bandwidth {l} must be < N = {n}")));
    }
    let mean = sample_mean(s);
    let mut omega = autocov_centered(s, &mean, 0);
    for lag in 1..=l {
        let w = bartlett_weight(lag as f64 / (l as f64 + 1.0));
        let g = autocov_centered(s, &mean, lag);
        omega += (&g + g.transpose()) * w;
    }
    Ok(LongRunCov {
        omega,
        bandwidth: l,
        n_used: n,
    })
}

/// Bartlett estimate with the default bandwidth `floor(log10(N))`.
pub fn bartlett_lrv_auto<S: Samples + ?Sized>(s: &S) -> Result<LongRunCov> {
    bartlett_lrv(s, bartlett_bandwidth(s.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::TimeSeries;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn bandwidth_examples() {
        assert_eq!(bartlett_bandwidth(1), 0);
        assert_eq!(bartlett_bandwidth(9), 0);
        assert_eq!(bartlett_bandwidth(10), 1);
        assert_eq!(bartlett_bandwidth(100), 2);
        assert_eq!(bartlett_bandwidth(999), 2);
        assert_eq!(bartlett_bandwidth(1000), 3);
    }

    #[test]
    fn constant_series_has_zero_autocov() {
        let s = TimeSeries::univariate(&[3.0; 12]).unwrap();
        for lag in 0..5 {
            assert_eq!(autocov(&s, lag).unwrap()[(0, 0)], 0.0);
        }
        assert_eq!(bartlett_lrv(&s, 3).unwrap().omega[(0, 0)], 0.0);
    }

    #[test]
    fn alternating_lag_one() {
        let s = TimeSeries::univariate(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert!((autocov(&s, 1).unwrap()[(0, 0)] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn lag_out_of_range() {
        let s = TimeSeries::univariate(&[1.0, 2.0]).unwrap();
        assert!(autocov(&s, 2).is_err());
        assert!(bartlett_lrv(&s, 2).is_err());
    }

    #[test]
    fn autocov_matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<[f64; 2]> = (0..30)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(0.0..5.0)])
            .collect();
        let s = TimeSeries::from_rows(&rows).unwrap();
        let got = autocov(&s, 2).unwrap();
        let n = rows.len();
        let mut mean = [0.0; 2];
        for r in &rows {
            mean[0] += r[0] / n as f64;
            mean[1] += r[1] / n as f64;
        }
        for i in 0..2 {
            for j in 0..2 {
                let mut brute = 0.0;
                for t in 2..n {
                    brute += (rows[t][i] - mean[i]) * (rows[t - 2][j] - mean[j]);
                }
                brute /= n as f64;
                assert!((got[(i, j)] - brute).abs() <= 1e-12 * brute.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn zero_bandwidth_is_lag_zero() {
        let s = TimeSeries::univariate(&[1.0, 4.0, 2.0, 8.0, 5.0]).unwrap();
        assert_eq!(
            bartlett_lrv(&s, 0).unwrap().omega,
            autocov(&s, 0).unwrap()
        );
    }

    #[test]
    fn iid_normal_long_run_variance_near_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let s = TimeSeries::univariate(&xs).unwrap();
        let w = bartlett_lrv(&s, 5).unwrap().omega[(0, 0)];
        assert!((0.9..=1.1).contains(&w), "{w}");
    }

    #[test]
    fn weights_strictly_decrease() {
        assert_eq!(bartlett_weight(0.0), 1.0);
        assert_eq!(bartlett_weight(1.0), 0.0);
        assert_eq!(bartlett_weight(1.5), 0.0);
        let l = 6;
        let ws: Vec<f64> = (1..=l).map(|k| bartlett_weight(k as f64 / (l as f64 + 1.0))).collect();
        assert!(ws.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn scalar_formula_agrees() {
        let xs = [0.3, -1.2, 2.2, 0.7, -0.4, 1.9, -2.5, 0.1, 0.8, 1.4, -0.6];
        let s = TimeSeries::univariate(&xs).unwrap();
        let l = 3;
        let mut scalar = autocov(&s, 0).unwrap()[(0, 0)];
        for lag in 1..=l {
            scalar += 2.0 * bartlett_weight(lag as f64 / (l as f64 + 1.0)) * autocov(&s, lag).unwrap()[(0, 0)];
        }
        let got = bartlett_lrv(&s, l).unwrap().omega[(0, 0)];
        assert!((got - scalar).abs() < 1e-14);
    }

    mod props {
        use super::super::*;
        use crate::timeseries::TimeSeries;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn estimate_is_symmetric_psd(
                rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 12..80),
                l in 0usize..6
            ) {
                let s = TimeSeries::from_rows(&rows).unwrap();
                let cov = bartlett_lrv(&s, l.min(rows.len() - 1)).unwrap();
                let om = &cov.omega;
                let scale = om.abs().max().max(1e-300);
                prop_assert!((om - om.transpose()).abs().max() <= 1e-10 * scale);
                let eig = nalgebra::SymmetricEigen::new(om.clone());
                let tr = om.trace();
                prop_assert!(eig.eigenvalues.min() >= -1e-10 * tr.max(1e-300));
            }
        }
    }
}
