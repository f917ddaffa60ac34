use chrono::{DateTime, Datelike, Timelike};
use thiserror::Error;

use crate::model::Timestamp;

pub const DIVERGENCE_EPSILON: f64 = 1e-9;
pub const MIN_BASELINE: usize = 10;
pub const MIN_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

/// A correlation coefficient. `flat` means one series had no variance; the
/// coefficient is then undefined and reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub flat: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64], min_overlap: usize) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let need = min_overlap.max(2);
    if x.len() < need {
        return Err(StatsError::TooFewSamples { need, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // relative tolerance so constant series with rounding noise still count as flat
    let scale_x = x.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let scale_y = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let n = x.len() as f64;
    if sxx <= n * (scale_x * 1e-12).powi(2) || syy <= n * (scale_y * 1e-12).powi(2) {
        return Ok(Correlation { r: 0.0, flat: true });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { r, flat: false })
}

/// Distance of the window mean from the baseline mean, in baseline
/// standard deviations.
pub fn divergence_score(window: &[f64], baseline: &[f64]) -> Result<f64, StatsError> {
    if baseline.len() < MIN_BASELINE {
        return Err(StatsError::TooFewSamples { need: MIN_BASELINE, got: baseline.len() });
    }
    if window.len() < MIN_WINDOW {
        return Err(StatsError::TooFewSamples { need: MIN_WINDOW, got: window.len() });
    }
    Ok((mean(window) - mean(baseline)).abs() / (std_dev(baseline) + DIVERGENCE_EPSILON))
}

/// UTC (month 1-12, day of month, hour 0-23).
pub fn temporal_params(ts: &Timestamp) -> (u32, u32, u32) {
    let secs = i64::try_from(ts.seconds()).unwrap_or(i64::MAX);
    let dt = DateTime::from_timestamp(secs, 0).unwrap_or_default();
    (dt.month(), dt.day(), dt.hour())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 4.0, 3.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x, 2).unwrap().r - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg, 2).unwrap().r + 1.0).abs() < 1e-12);
        let flat = pearson(&x, &[5.0; 5], 2).unwrap();
        assert!(flat.flat && flat.r == 0.0);
        assert_eq!(pearson(&x, &x[..4], 2), Err(StatsError::LengthMismatch(5, 4)));
        assert!(matches!(pearson(&x[..2], &x[..2], 3), Err(StatsError::TooFewSamples { .. })));
    }

    #[test]
    fn divergence_examples() {
        let base: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        // mean 0, population sd 1
        let s = divergence_score(&[10.0, 10.0, 10.0], &base).unwrap();
        assert!((s - 10.0).abs() < 1e-6);
        assert!(divergence_score(&[0.0, 0.0, 0.0], &base).unwrap() < 1e-9);
        assert!(divergence_score(&[1.0, 1.0], &base).is_err());
    }

    #[test]
    fn temporal() {
        assert_eq!(temporal_params(&Timestamp::from_secs(0)), (1, 1, 0));
        assert_eq!(temporal_params(&Timestamp::from_secs(1589469825)), (5, 14, 15));
    }
}
