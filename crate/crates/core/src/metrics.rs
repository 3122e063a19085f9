//! Forecast quality measures and Student-t interval utilities.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty sequence")]
    Empty,
    #[error("need at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

/// Point forecast with a two-sided interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub points: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl IntervalForecast {
    /// Degenerate interval: lower == point == upper.
    pub fn point_only(points: Vec<f64>) -> Self {
        IntervalForecast {
            lower: points.clone(),
            upper: points.clone(),
            points,
            level: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        self.lower.len() == self.points.len()
            && self.upper.len() == self.points.len()
            && self
                .lower
                .iter()
                .zip(&self.points)
                .zip(&self.upper)
                .all(|((l, p), u)| l <= p && p <= u)
    }
}

pub fn rmse(predicted: &[f64], observed: &[f64]) -> Result<f64, MetricsError> {
    if predicted.len() != observed.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), observed.len()));
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sse: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o) * (p - o))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// Unconstrained dynamic time warping with absolute-difference cost and no
/// path-length normalization.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        curr[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}

/// Student-t CDF with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of the Student-t distribution by bisection on the CDF.
pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && dof > 0.0);
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, dof);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Mean and sample (n - 1) standard deviation.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean ± t(1 - (1 - level)/2, n - 1) · s` over the ensemble members.
pub fn t_interval(members: &[f64], level: f64) -> Result<(f64, f64), MetricsError> {
    if members.len() < 2 {
        return Err(MetricsError::TooFewMembers(members.len()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    let (mean, s) = mean_and_sample_std(members);
    let t = student_t_quantile(1.0 - (1.0 - level) / 2.0, (members.len() - 1) as f64);
    Ok((mean - t * s, mean + t * s))
}

/// Fraction of timestamps where the actual value lies inside the interval.
pub fn coverage(intervals: &IntervalForecast, actual: &[f64]) -> Result<f64, MetricsError> {
    if intervals.lower.len() != actual.len() || intervals.upper.len() != actual.len() {
        return Err(MetricsError::LengthMismatch(intervals.lower.len(), actual.len()));
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = actual
        .iter()
        .zip(intervals.lower.iter().zip(&intervals.upper))
        .filter(|(a, (l, u))| *l <= *a && *a <= *u)
        .count();
    Ok(hits as f64 / actual.len() as f64)
}
