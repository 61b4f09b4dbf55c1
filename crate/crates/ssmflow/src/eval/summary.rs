//! Posterior sample summaries.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Per-parameter summary in natural space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub p2_5: f64,
    pub p50: f64,
    pub p97_5: f64,
}

/// Linear interpolation of order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Mean, standard deviation and 2.5/50/97.5 percentiles of each column of
/// an (n, p) sample set. Requires at least 10 samples.
pub fn posterior_summary(samples: &Tensor) -> Result<Vec<ParamSummary>> {
    if samples.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "samples must be (n, p), got {:?}",
            samples.shape()
        )));
    }
    let (n, p) = (samples.shape()[0], samples.shape()[1]);
    if n < 10 {
        return Err(Error::Config(format!(
            "need at least 10 samples for a summary, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(p);
    for c in 0..p {
        let mut col: Vec<f64> = (0..n).map(|r| samples.row(r)[c]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(ParamSummary {
            mean,
            sd: var.sqrt(),
            p2_5: percentile(&col, 0.025),
            p50: percentile(&col, 0.5),
            p97_5: percentile(&col, 0.975),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::{standard_normal_at, stream};

    #[test]
    fn constant_samples() {
        let samples = Tensor::matrix(12, 1, vec![3.25; 12]).unwrap();
        let s = &posterior_summary(&samples).unwrap()[0];
        assert_eq!(s.mean, 3.25);
        assert_eq!(s.sd, 0.0);
        assert_eq!(s.p2_5, 3.25);
        assert_eq!(s.p50, 3.25);
        assert_eq!(s.p97_5, 3.25);
    }

    #[test]
    fn median_of_one_to_hundred() {
        let samples = Tensor::matrix(100, 1, (1..=100).map(|v| v as f64).collect()).unwrap();
        let s = &posterior_summary(&samples).unwrap()[0];
        assert!((s.p50 - 50.5).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_gaussian_moments() {
        let n = 100_000;
        let data: Vec<f64> = (0..n)
            .map(|i| 3.0 + 2.0 * standard_normal_at(5, stream::X_NOISE, i as i64, 0))
            .collect();
        let samples = Tensor::matrix(n, 1, data).unwrap();
        let s = &posterior_summary(&samples).unwrap()[0];
        assert!((s.mean - 3.0).abs() < 0.05);
        assert!((s.sd - 2.0).abs() < 0.05);
        // 2.5% quantile of N(3, 2²) is 3 - 1.96·2.
        assert!((s.p2_5 - (3.0 - 1.96 * 2.0)).abs() < 0.1);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let samples = Tensor::matrix(5, 1, vec![0.0; 5]).unwrap();
        assert!(posterior_summary(&samples).is_err());
    }
}
