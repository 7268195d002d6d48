//! Sequential mean-shift detectors over a stream that follows a training
//! prefix of length `m`.
//!
//! Both detectors track the running deviation
//! `Σ_{i=m+1}^{m+k} X_i − (k/m) Σ_{i=1}^{m} X_i` and stop at the first `k ≥ 1`
//! where the statistic reaches its weighted threshold. The way the deviation
//! is normalized, and the threshold shape, are supplied by a
//! [`DetectorKernel`]; kernels are looked up by name in a [`DetectorRegistry`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::critvals::{CritVal, CritValKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::longrun::bartlett_lrv_auto;
use crate::timeseries::{sample_mean, Samples};

pub const MIN_TRAINING: usize = 4;

/// `g_γ(m, k) = √m (1 + k/m) (k/(k+m))^γ`.
pub fn weight_g(m: usize, k: usize, gamma: f64) -> f64 {
    assert!(m >= 1 && k >= 1, "weight_g needs m, k >= 1");
    let (mf, kf) = (m as f64, k as f64);
    let base = mf.sqrt() * (1.0 + kf / mf);
    if gamma == 0.0 {
        base
    } else {
        base * (kf / (kf + mf)).powf(gamma)
    }
}

/// Normalization and threshold of one detector family.
pub trait DetectorKernel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Which critical-value functional the threshold is calibrated against.
    fn critval_kind(&self) -> CritValKind;

    /// Frozen normalizing matrix computed from the training prefix.
    fn prepare(&self, prefix: &dyn Samples, mean: &[f64]) -> Result<(DMatrix<f64>, bool)>;

    /// Detector value for the running deviation after `k` monitored samples.
    fn statistic(&self, norm: &DMatrix<f64>, deviation: &[f64], m: usize, k: usize) -> f64;

    fn threshold(&self, critval: f64, m: usize, k: usize, gamma: f64) -> f64;
}

/// `‖Ω̂^{-1/2} dev‖₁` against `c · g_γ(m, k)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardKernel;

impl DetectorKernel for StandardKernel {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn critval_kind(&self) -> CritValKind {
        CritValKind::OnlineStandard
    }

    fn prepare(&self, prefix: &dyn Samples, _mean: &[f64]) -> Result<(DMatrix<f64>, bool)> {
        Ok(bartlett_lrv_auto(prefix)?.inv_sqrt())
    }

    fn statistic(&self, norm: &DMatrix<f64>, dev: &[f64], _m: usize, _k: usize) -> f64 {
        let d = dev.len();
        (0..d)
            .map(|i| (0..d).map(|j| norm[(i, j)] * dev[j]).sum::<f64>().abs())
            .sum()
    }

    fn threshold(&self, critval: f64, m: usize, k: usize, gamma: f64) -> f64 {
        critval * weight_g(m, k, gamma)
    }
}

/// Self-normalized statistic `(k²/m) Dᵀ A⁻¹ D` with `D` the post-training mean
/// minus the training mean and `A = m⁻² Σ_{j≤m} j² D₁ʲ D₁ʲᵀ` built from the
/// partial means of the prefix. Both sides are `O(1)` under no change, so the
/// threshold is `c · g_γ(m, k)² / m`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RatioKernel;

/// `A = m⁻² Σ_{j=1..m} j² D₁ʲ D₁ʲᵀ` where `j D₁ʲ = Σ_{i≤j} (X_i − X̄_m)`.
pub fn ratio_denominator(prefix: &dyn Samples, mean: &[f64]) -> DMatrix<f64> {
    let m = prefix.len();
    let d = prefix.dim();
    let mut partial = vec![0.0; d];
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for j in 0..m {
        for ((p, x), mu) in partial.iter_mut().zip(prefix.row(j)).zip(mean) {
            *p += x - mu;
        }
        for a in 0..d {
            for b in 0..d {
                acc[(a, b)] += partial[a] * partial[b];
            }
        }
    }
    acc / (m as f64 * m as f64)
}

impl DetectorKernel for RatioKernel {
    fn name(&self) -> &'static str {
        "ratio"
    }

    fn critval_kind(&self) -> CritValKind {
        CritValKind::OnlineRatio
    }

    fn prepare(&self, prefix: &dyn Samples, mean: &[f64]) -> Result<(DMatrix<f64>, bool)> {
        Ok(linalg::regularized_inverse(&ratio_denominator(prefix, mean)))
    }

    fn statistic(&self, norm: &DMatrix<f64>, dev: &[f64], m: usize, _k: usize) -> f64 {
        // k² Dᵀ A⁻¹ D / m with k D = dev.
        (linalg::quad_form(norm, dev) / m as f64).max(0.0)
    }

    fn threshold(&self, critval: f64, m: usize, k: usize, gamma: f64) -> f64 {
        let g = weight_g(m, k, gamma);
        critval * g * g / m as f64
    }
}

/// Detector kernels by name.
#[derive(Clone)]
pub struct DetectorRegistry {
    kernels: BTreeMap<&'static str, Arc<dyn DetectorKernel>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        Self {
            kernels: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, kernel: Arc<dyn DetectorKernel>) {
        self.kernels.insert(kernel.name(), kernel);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DetectorKernel>> {
        self.kernels
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                what: "detector",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kernels.keys().copied().collect()
    }
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(StandardKernel));
        r.register(Arc::new(RatioKernel));
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub alarm: bool,
    pub detector_value: f64,
    pub threshold: f64,
    pub k_at_eval: usize,
}

/// Frozen training statistics plus the running sequential-test state.
#[derive(Clone)]
pub struct OnlineDetectorState {
    kernel: Arc<dyn DetectorKernel>,
    m: usize,
    training_mean: Vec<f64>,
    norm: DMatrix<f64>,
    regularized: bool,
    gamma: f64,
    critval: CritVal,
    /// Running `Σ_{i>m} (X_i − X̄_m)`.
    deviation: Vec<f64>,
    k: usize,
    stopped_at: Option<usize>,
}

impl fmt::Debug for OnlineDetectorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OnlineDetectorState")
            .field("kernel", &self.kernel.name())
            .field("m", &self.m)
            .field("k", &self.k)
            .field("gamma", &self.gamma)
            .field("critval", &self.critval.value)
            .field("stopped_at", &self.stopped_at)
            .finish()
    }
}

/// Freezes training statistics from `prefix` for the given kernel.
pub fn train(
    prefix: &dyn Samples,
    kernel: Arc<dyn DetectorKernel>,
    gamma: f64,
    critval: CritVal,
) -> Result<OnlineDetectorState> {
    let m = prefix.len();
    if m < MIN_TRAINING {
        return Err(Error::TooShort {
            needed: MIN_TRAINING,
            got: m,
        });
    }
    let r = &critval.request;
    if r.kind != kernel.critval_kind() {
        return Err(Error::invalid(format!(
            "{} detector needs a {} critical value, got {}",
            kernel.name(),
            kernel.critval_kind(),
            r.kind
        )));
    }
    if r.d != prefix.dim() {
        return Err(Error::DimensionMismatch {
            expected: prefix.dim(),
            got: r.d,
        });
    }
    if r.gamma != gamma {
        return Err(Error::invalid(format!(
            "critical value is for gamma {}, detector uses {gamma}",
            r.gamma
        )));
    }
    let training_mean = sample_mean(prefix);
    let (norm, regularized) = kernel.prepare(prefix, &training_mean)?;
    Ok(OnlineDetectorState {
        kernel,
        m,
        deviation: vec![0.0; training_mean.len()],
        training_mean,
        norm,
        regularized,
        gamma,
        critval,
        k: 0,
        stopped_at: None,
    })
}

impl OnlineDetectorState {
    pub fn kind(&self) -> &'static str {
        self.kernel.name()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.training_mean.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn critval(&self) -> &CritVal {
        &self.critval
    }

    pub fn training_mean(&self) -> &[f64] {
        &self.training_mean
    }

    /// `Ω̂^{-1/2}` for the standard kernel, `A⁻¹` for the ratio kernel.
    pub fn normalizer(&self) -> &DMatrix<f64> {
        &self.norm
    }

    /// The training statistics needed a ridge to be invertible.
    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Running `Σ_{i=m+1}^{m+k} X_i − (k/m) Σ_{i=1}^{m} X_i`.
    pub fn deviation(&self) -> &[f64] {
        &self.deviation
    }

    /// Monitoring step `k` at which the detector stopped.
    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }

    pub fn step(&mut self, x: &[f64]) -> Result<Verdict> {
        if let Some(k) = self.stopped_at {
            return Err(Error::Stopped(k));
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        for ((dv, xi), mu) in self.deviation.iter_mut().zip(x).zip(&self.training_mean) {
            *dv += xi - mu;
        }
        self.k += 1;
        let value = self.kernel.statistic(&self.norm, &self.deviation, self.m, self.k);
        let threshold = self.kernel.threshold(self.critval.value, self.m, self.k, self.gamma);
        let alarm = value >= threshold;
        if alarm {
            self.stopped_at = Some(self.k);
        }
        Ok(Verdict {
            alarm,
            detector_value: value,
            threshold,
            k_at_eval: self.k,
        })
    }

    /// Steps over at most `window_k` samples (all of them when `None`),
    /// stopping early on alarm. Returns the last verdict and the number of
    /// samples consumed.
    pub fn run_window<'a, I>(&mut self, stream: I, window_k: Option<usize>) -> Result<(Verdict, usize)>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if window_k == Some(0) {
            return Err(Error::invalid("monitoring window must be >= 1"));
        }
        let limit = window_k.unwrap_or(usize::MAX);
        let mut last = None;
        let mut consumed = 0;
        for x in stream.into_iter().take(limit) {
            let v = self.step(x)?;
            consumed += 1;
            last = Some(v);
            if v.alarm {
                break;
            }
        }
        last.map(|v| (v, consumed))
            .ok_or_else(|| Error::invalid("empty monitoring stream"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critvals::CritValRequest;
    use crate::timeseries::TimeSeries;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn cv(kind: CritValKind, d: usize, gamma: f64, value: f64) -> CritVal {
        CritVal {
            value,
            request: CritValRequest::new(kind, d, gamma, 0.05),
            mc_stderr: 0.0,
        }
    }

    fn standard(prefix: &TimeSeries, value: f64) -> OnlineDetectorState {
        train(prefix, Arc::new(StandardKernel), 0.0, cv(CritValKind::OnlineStandard, prefix.dim(), 0.0, value)).unwrap()
    }

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight_g(100, 100, 0.0), 20.0);
        assert!((weight_g(400, 400, 0.25) - 40.0 * 0.5f64.powf(0.25)).abs() < 1e-12);
        assert!((weight_g(400, 400, 0.25) - 33.636).abs() < 1e-3);
        assert!((weight_g(50, 7, 0.0) - 50f64.sqrt() * (1.0 + 7.0 / 50.0)).abs() < 1e-12);
        let ws: Vec<f64> = (1..100).map(|k| weight_g(30, k, 0.0)).collect();
        assert!(ws.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn training_mean_and_constant_prefix() {
        let s = TimeSeries::univariate(&normals(1, 200)).unwrap();
        assert!(standard(&s, 2.0).training_mean()[0].abs() <= 0.2);
        let c = TimeSeries::univariate(&[7.0; 20]).unwrap();
        let st = standard(&c, 2.0);
        assert_eq!(st.training_mean(), &[7.0]);
        assert!(st.regularized());
        assert!(st.normalizer().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn training_validation() {
        let s = TimeSeries::univariate(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            train(&s, Arc::new(StandardKernel), 0.0, cv(CritValKind::OnlineStandard, 1, 0.0, 2.0)),
            Err(Error::TooShort { .. })
        ));
        let s = TimeSeries::univariate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(train(&s, Arc::new(RatioKernel), 0.0, cv(CritValKind::OnlineStandard, 1, 0.0, 2.0)).is_err());
        assert!(train(&s, Arc::new(StandardKernel), 0.25, cv(CritValKind::OnlineStandard, 1, 0.0, 2.0)).is_err());
        assert!(matches!(
            train(&s, Arc::new(StandardKernel), 0.0, cv(CritValKind::OnlineStandard, 2, 0.0, 2.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn samples_at_training_mean_never_alarm() {
        let s = TimeSeries::univariate(&[1.0, 3.0, 1.0, 3.0, 1.0, 3.0]).unwrap();
        let mut st = standard(&s, 2.0);
        for _ in 0..500 {
            let v = st.step(&[2.0]).unwrap();
            assert_eq!(v.detector_value, 0.0);
            assert!(!v.alarm);
        }
    }

    #[test]
    fn numerator_by_hand() {
        let s = TimeSeries::univariate(&[0.0; 4]).unwrap();
        let mut st = standard(&s, 2.0);
        st.step(&[1.0]).unwrap();
        assert_eq!(st.deviation(), &[1.0]);
    }

    #[test]
    fn numerator_matches_double_sum() {
        let xs = normals(12, 30);
        let m = 12;
        let s = TimeSeries::univariate(&xs[..m]).unwrap();
        let mut st = standard(&s, 1e9);
        let train_sum: f64 = xs[..m].iter().sum();
        for k in 1..=(xs.len() - m) {
            st.step(&[xs[m + k - 1]]).unwrap();
            let brute = xs[m..m + k].iter().sum::<f64>() - k as f64 / m as f64 * train_sum;
            assert!((st.deviation()[0] - brute).abs() <= 1e-12 * brute.abs().max(1.0));
        }
    }

    #[test]
    fn ratio_denominator_matches_double_sum() {
        let xs = normals(31, 20);
        let s = TimeSeries::univariate(&xs).unwrap();
        let m = xs.len();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let mut brute = 0.0;
        for j in 1..=m {
            let dj = xs[..j].iter().sum::<f64>() / j as f64 - mean;
            brute += (j * j) as f64 * dj * dj;
        }
        brute /= (m * m) as f64;
        let got = ratio_denominator(&s, &[mean])[(0, 0)];
        assert!((got - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn ratio_value_by_formula() {
        let xs = normals(5, 40);
        let m = 30;
        let s = TimeSeries::univariate(&xs[..m]).unwrap();
        let mut st = train(&s, Arc::new(RatioKernel), 0.0, cv(CritValKind::OnlineRatio, 1, 0.0, 1e9)).unwrap();
        let mean = xs[..m].iter().sum::<f64>() / m as f64;
        let a = ratio_denominator(&s, &[mean])[(0, 0)];
        for k in 1..=10 {
            let v = st.step(&[xs[m + k - 1]]).unwrap();
            let dk = xs[m..m + k].iter().sum::<f64>() / k as f64 - mean;
            let tr = (k * k) as f64 / m as f64 * dk * dk / a;
            assert!((v.detector_value - tr).abs() <= 1e-10 * tr.max(1e-12));
            let g = weight_g(m, k, 0.0);
            assert!((v.threshold - 1e9 * g * g / m as f64).abs() <= 1e-6 * v.threshold);
        }
    }

    #[test]
    fn alarm_is_absorbing() {
        let s = TimeSeries::univariate(&normals(2, 50)).unwrap();
        let mut st = standard(&s, 2.0);
        let v = st.step(&[1e6]).unwrap();
        assert!(v.alarm);
        assert_eq!(st.stopped_at(), Some(1));
        assert!(matches!(st.step(&[0.0]), Err(Error::Stopped(1))));
        assert_eq!(st.stopped_at(), Some(1));
    }

    #[test]
    fn window_stops_early_on_alarm() {
        let s = TimeSeries::univariate(&normals(3, 50)).unwrap();
        let mut stream = vec![[0.0]; 50];
        stream[9] = [1e6];
        let mut st = standard(&s, 2.0);
        let (v, used) = st.run_window(stream.iter().map(|r| &r[..]), Some(50)).unwrap();
        assert!(v.alarm);
        assert_eq!(used, 10);
        assert_eq!(v.k_at_eval, 10);
    }

    #[test]
    fn quiet_window_runs_to_the_end() {
        let s = TimeSeries::univariate(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        let stream = vec![[0.0]; 80];
        let mut st = standard(&s, 2.0);
        let (v, used) = st.run_window(stream.iter().map(|r| &r[..]), Some(50)).unwrap();
        assert!(!v.alarm);
        assert_eq!(used, 50);
        assert!(st.run_window(std::iter::empty(), Some(5)).is_err());
        assert!(st.run_window(stream.iter().map(|r| &r[..]), Some(0)).is_err());
    }

    #[test]
    fn dimension_checked_on_step() {
        let s = TimeSeries::univariate(&normals(3, 10)).unwrap();
        let mut st = standard(&s, 2.0);
        assert!(matches!(st.step(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn l1_norm_in_two_dimensions() {
        let rows: Vec<[f64; 2]> = (0..40).map(|i| if i % 2 == 0 { [1.0, -2.0] } else { [-1.0, 2.0] }).collect();
        let s = TimeSeries::from_rows(&rows).unwrap();
        let mut st = standard(&s, 1e9);
        let v = st.step(&[0.5, -0.5]).unwrap();
        let n = st.normalizer();
        let dev = [0.5, -0.5];
        let want = (n[(0, 0)] * dev[0] + n[(0, 1)] * dev[1]).abs() + (n[(1, 0)] * dev[0] + n[(1, 1)] * dev[1]).abs();
        assert!((v.detector_value - want).abs() < 1e-12 * want);
    }

    #[test]
    fn registry_lookup() {
        let r = DetectorRegistry::default();
        assert_eq!(r.names(), vec!["ratio", "standard"]);
        assert_eq!(r.get("ratio").unwrap().critval_kind(), CritValKind::OnlineRatio);
        assert!(matches!(r.get("page"), Err(Error::UnknownStrategy { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn run_values(kernel: Arc<dyn DetectorKernel>, kind: CritValKind, xs: &[f64], m: usize) -> Vec<f64> {
            let s = TimeSeries::univariate(&xs[..m]).unwrap();
            let mut st = train(&s, kernel, 0.0, cv(kind, 1, 0.0, 1e12)).unwrap();
            xs[m..].iter().map(|x| st.step(&[*x]).unwrap().detector_value).collect()
        }

        proptest! {
            #[test]
            fn standard_is_shift_invariant(seed in any::<u64>(), c in -1e3f64..1e3) {
                let xs = normals(seed, 80);
                let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                let a = run_values(Arc::new(StandardKernel), CritValKind::OnlineStandard, &xs, 50);
                let b = run_values(Arc::new(StandardKernel), CritValKind::OnlineStandard, &shifted, 50);
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() <= 1e-8 * u.abs().max(1e-6), "{} vs {}", u, v);
                }
            }

            #[test]
            fn ratio_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
                let xs = normals(seed, 80);
                let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
                let a = run_values(Arc::new(RatioKernel), CritValKind::OnlineRatio, &xs, 50);
                let b = run_values(Arc::new(RatioKernel), CritValKind::OnlineRatio, &scaled, 50);
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() <= 1e-8 * u.abs().max(1e-12), "{} vs {}", u, v);
                }
            }

            #[test]
            fn identical_inputs_identical_verdicts(seed in any::<u64>()) {
                let xs = normals(seed, 120);
                let s = TimeSeries::univariate(&xs[..60]).unwrap();
                let run = || {
                    let mut st = standard(&s, 2.2);
                    let mut out = Vec::new();
                    for x in &xs[60..] {
                        match st.step(&[*x]) {
                            Ok(v) => out.push(v),
                            Err(_) => break,
                        }
                    }
                    out
                };
                prop_assert_eq!(run(), run());
            }
        }
    }
}
