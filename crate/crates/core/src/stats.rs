//! Small numerical helpers shared by the Monte Carlo aggregators: compensated
//! summation, replicate means with standard errors, and log-linear rate fits.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier (improved Kahan) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn stable_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Sample mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, count };
        }
        let mean = stable_sum(samples.iter().copied()) / count as f64;
        if count == 1 {
            return Self { mean, stderr: 0.0, count };
        }
        let ss = stable_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
        let var = ss / (count - 1) as f64;
        Self { mean, stderr: (var / count as f64).sqrt(), count }
    }

    pub fn variance(&self) -> f64 {
        self.stderr * self.stderr * self.count as f64
    }

    /// Whether `target` lies within `k` standard errors of the mean.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Outcome of a log-linear fit `log value ≈ slope·n + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares of `log value` against `n` over the points whose
/// abscissa falls in `window`.
pub fn fit_rate(series: &[(usize, f64)], window: RangeInclusive<usize>) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(n, _)| window.contains(n))
        .map(|&(n, v)| {
            if v > 0.0 && v.is_finite() {
                Ok((n as f64, v.ln()))
            } else {
                Err(Error::InvalidArgument(format!(
                    "fit_rate needs positive finite values, got {v} at n={n}"
                )))
            }
        })
        .collect::<Result<_>>()?;
    fit_line(&pts)
}

/// Least-squares line through `(x, y)` pairs; needs at least five points.
pub fn fit_line(pts: &[(f64, f64)]) -> Result<RateFit> {
    if pts.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 5 points, got {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = stable_sum(pts.iter().map(|p| p.0)) / k;
    let my = stable_sum(pts.iter().map(|p| p.1)) / k;
    let sxx = stable_sum(pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)));
    let sxy = stable_sum(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    let syy = stable_sum(pts.iter().map(|p| (p.1 - my) * (p.1 - my)));
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { slope, intercept, r_squared, points: pts.len() })
}

/// Least squares `design · coef ≈ rhs` with per-column scaling, solved by SVD.
pub(crate) fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scales: Vec<f64> = design
        .column_iter()
        .map(|c| {
            let m = c.amax();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = design.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let svd = scaled.svd(true, true);
    let coef = svd
        .solve(rhs, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
    Ok(DVector::from_iterator(
        coef.len(),
        coef.iter().zip(&scales).map(|(c, s)| c / s),
    ))
}

/// Upper-tail standard normal quantile used for one-sided 99% bounds.
pub const Z_99: f64 = 2.326_347_874_040_841;
