//! Direction of a detected change from the MACD trend indicator.
//!
//! `TI(n) = MACD(n) − EMA_{p1}(MACD)(n)` with `MACD = EMA_{p2} − EMA_{p3}`.
//! A positive indicator means the level is moving up. Indices are 1-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacdParams {
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub h: usize,
}

impl Default for MacdParams {
    fn default() -> Self {
        Self {
            p1: 9,
            p2: 12,
            p3: 26,
            h: 10,
        }
    }
}

impl MacdParams {
    pub fn validate(&self) -> Result<()> {
        // p1 = 1 makes the signal line equal to MACD, so TI would vanish.
        if self.p1 < 2 {
            return Err(Error::invalid("trend lag p1 must be >= 2"));
        }
        if !(self.p1 < self.p2 && self.p2 < self.p3) {
            return Err(Error::invalid(format!(
                "trend lags must satisfy p1 < p2 < p3, got {}, {}, {}",
                self.p1, self.p2, self.p3
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    /// Up only for a strictly positive indicator.
    pub fn from_ti(ti: f64) -> Self {
        if ti > 0.0 {
            Direction::Up
        } else {
            Direction::Down
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendMode {
    Point,
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub ti_value: f64,
    pub direction: Direction,
    pub mode: TrendMode,
    pub at_index: usize,
    /// Last index summed; below `at_index + h` when the window was clamped.
    pub window_end: usize,
}

/// `EMA_p(n) = 2/(p+1) X_n + (p−1)/(p+1) EMA_p(n−1)`, seeded with `X_1`.
pub fn ema(s: &[f64], p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::invalid("EMA lag must be >= 1"));
    }
    if s.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let a = 2.0 / (p as f64 + 1.0);
    let b = (p as f64 - 1.0) / (p as f64 + 1.0);
    let mut out = Vec::with_capacity(s.len());
    let mut prev = s[0];
    out.push(prev);
    for &x in &s[1..] {
        prev = a * x + b * prev;
        out.push(prev);
    }
    Ok(out)
}

pub fn macd(s: &[f64], p2: usize, p3: usize) -> Result<Vec<f64>> {
    if p2 >= p3 {
        return Err(Error::invalid(format!("MACD needs p2 < p3, got {p2}, {p3}")));
    }
    let fast = ema(s, p2)?;
    let slow = ema(s, p3)?;
    Ok(fast.iter().zip(&slow).map(|(f, l)| f - l).collect())
}

/// The whole `TI` series.
pub fn trend_indicator(s: &[f64], params: &MacdParams) -> Result<Vec<f64>> {
    params.validate()?;
    let m = macd(s, params.p2, params.p3)?;
    let signal = ema(&m, params.p1)?;
    Ok(m.iter().zip(&signal).map(|(a, b)| a - b).collect())
}

fn check_index(n: usize, len: usize) -> Result<()> {
    if n < 1 || n > len {
        return Err(Error::invalid(format!("index {n} outside 1..={len}")));
    }
    Ok(())
}

pub fn ti_point(s: &[f64], n: usize, params: &MacdParams) -> Result<TrendVerdict> {
    check_index(n, s.len())?;
    let ti = trend_indicator(&s[..n], params)?[n - 1];
    Ok(TrendVerdict {
        ti_value: ti,
        direction: Direction::from_ti(ti),
        mode: TrendMode::Point,
        at_index: n,
        window_end: n,
    })
}

/// `Σ_{k=cp}^{cp+h} TI(k)`; the window must fit in the series.
pub fn ti_interval(s: &[f64], cp: usize, params: &MacdParams) -> Result<TrendVerdict> {
    check_index(cp, s.len())?;
    if cp + params.h > s.len() {
        return Err(Error::invalid(format!(
            "trend window [{cp}, {}] runs past the series end {}",
            cp + params.h,
            s.len()
        )));
    }
    ti_interval_clamped(s, cp, params)
}

/// Like [`ti_interval`] but sums only up to the last available sample.
pub fn ti_interval_clamped(s: &[f64], cp: usize, params: &MacdParams) -> Result<TrendVerdict> {
    check_index(cp, s.len())?;
    let end = (cp + params.h).min(s.len());
    let ti_series = trend_indicator(&s[..end], params)?;
    let ti: f64 = ti_series[cp - 1..end].iter().sum();
    Ok(TrendVerdict {
        ti_value: ti,
        direction: Direction::from_ti(ti),
        mode: TrendMode::Interval,
        at_index: cp,
        window_end: end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn ema_examples() {
        assert_eq!(ema(&[4.0; 10], 5).unwrap(), vec![4.0; 10]);
        let xs = [1.0, -3.0, 2.5, 8.0];
        assert_eq!(ema(&xs, 1).unwrap(), xs.to_vec());
        assert_eq!(ema(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5]);
        assert!(ema(&[], 3).is_err());
        assert!(ema(&[1.0], 0).is_err());
    }

    #[test]
    fn macd_examples() {
        assert!(macd(&[3.0; 20], 12, 26).unwrap().iter().all(|v| *v == 0.0));
        let ramp: Vec<f64> = (1..=100).map(|n| n as f64).collect();
        let m = macd(&ramp, 12, 26).unwrap();
        assert!(m[1..].iter().all(|v| *v > 0.0));
        let shifted: Vec<f64> = ramp.iter().map(|x| x + 1000.0).collect();
        let m2 = macd(&shifted, 12, 26).unwrap();
        for (a, b) in m.iter().zip(&m2) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(macd(&ramp, 26, 12).is_err());
    }

    #[test]
    fn param_validation() {
        assert!(MacdParams::default().validate().is_ok());
        let bad = MacdParams { p1: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MacdParams { p1: 12, p2: 12, p3: 26, h: 0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_series_points_down() {
        let s = [5.0; 60];
        let p = ti_point(&s, 30, &MacdParams::default()).unwrap();
        assert_eq!(p.ti_value, 0.0);
        assert_eq!(p.direction, Direction::Down);
        let i = ti_interval(&s, 30, &MacdParams::default()).unwrap();
        assert_eq!(i.ti_value, 0.0);
        assert_eq!(i.direction, Direction::Down);
    }

    #[test]
    fn clean_steps() {
        let up: Vec<f64> = (1..=100).map(|n| if n > 50 { 5.0 } else { 0.0 }).collect();
        assert_eq!(ti_point(&up, 52, &MacdParams::default()).unwrap().direction, Direction::Up);
        let down: Vec<f64> = up.iter().map(|x| -x).collect();
        assert_eq!(ti_point(&down, 52, &MacdParams::default()).unwrap().direction, Direction::Down);
    }

    #[test]
    fn zero_width_interval_is_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..80).map(|_| rng.sample(StandardNormal)).collect();
        let params = MacdParams { h: 0, ..Default::default() };
        for n in [1, 17, 80] {
            let a = ti_point(&xs, n, &params).unwrap();
            let b = ti_interval(&xs, n, &params).unwrap();
            assert_eq!(a.ti_value, b.ti_value);
        }
    }

    #[test]
    fn interval_window_bounds() {
        let xs = [0.0; 30];
        assert!(ti_interval(&xs, 21, &MacdParams::default()).is_err());
        assert!(ti_interval(&xs, 20, &MacdParams::default()).is_ok());
        let c = ti_interval_clamped(&xs, 25, &MacdParams::default()).unwrap();
        assert_eq!(c.window_end, 30);
        assert!(ti_point(&xs, 0, &MacdParams::default()).is_err());
        assert!(ti_point(&xs, 31, &MacdParams::default()).is_err());
    }

    #[test]
    fn point_matches_full_series() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(81);
        let xs: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let full = trend_indicator(&xs, &MacdParams::default()).unwrap();
        for n in 1..=50 {
            assert_eq!(ti_point(&xs, n, &MacdParams::default()).unwrap().ti_value, full[n - 1]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn indicator_is_odd(xs in prop::collection::vec(-1e3f64..1e3, 1..80)) {
                let p = MacdParams::default();
                let a = trend_indicator(&xs, &p).unwrap();
                let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
                let b = trend_indicator(&neg, &p).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    prop_assert_eq!(*u, -*v);
                }
            }

            #[test]
            fn indicator_ignores_level(xs in prop::collection::vec(-1e2f64..1e2, 1..80), c in -1e3f64..1e3) {
                let p = MacdParams::default();
                let a = trend_indicator(&xs, &p).unwrap();
                let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                let b = trend_indicator(&shifted, &p).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() <= 1e-9 * (1.0 + c.abs()));
                }
            }
        }
    }
}
