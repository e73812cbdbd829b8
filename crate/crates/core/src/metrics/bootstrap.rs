use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::RiskTable;
use crate::seed;

use super::{align, Sample, SurvivalOutcomes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    /// Metric on the full sample.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    /// Resamples on which the metric was undefined (skipped).
    pub undefined: usize,
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices for resample `index` of a sample of size `n`.
pub(crate) fn resample_indices(n: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut rng = seed::rng(seed::derive(seed, index as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Evaluate `metric` on `b` resamples. `Ok(None)` marks an undefined resample.
pub(crate) fn resampled_values<F>(n: usize, b: usize, seed: u64, metric: F) -> Result<Vec<Option<f64>>>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    (0..b)
        .into_par_iter()
        .map(|i| match metric(&resample_indices(n, seed, i)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Percentile interval from resampled values; errors when more than half
/// of them are undefined.
pub(crate) fn interval(point: f64, values: Vec<Option<f64>>) -> Result<BootstrapInterval> {
    let total = values.len();
    let mut defined: Vec<f64> = values.into_iter().flatten().collect();
    let undefined = total - defined.len();
    if defined.is_empty() || 2 * undefined > total {
        return Err(Error::Instability { undefined, total });
    }
    defined.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        point,
        lower: percentile(&defined, 0.025),
        upper: percentile(&defined, 0.975),
        resamples: total,
        undefined,
    })
}

/// Percentile bootstrap on an aligned sample.
pub fn bootstrap_sample<F>(metric: F, sample: &Sample, b: usize, seed: u64) -> Result<BootstrapInterval>
where
    F: Fn(&Sample) -> Result<f64> + Sync,
{
    if b == 0 {
        return Err(Error::Argument("bootstrap needs at least one resample".into()));
    }
    let point = metric(sample)?;
    let values = resampled_values(sample.len(), b, seed, |idx| metric(&sample.take(idx)))?;
    interval(point, values)
}

/// Percentile bootstrap interval of `metric` over subjects.
pub fn bootstrap_ci<F>(
    metric: F,
    risks: &RiskTable,
    outcomes: &SurvivalOutcomes,
    b: usize,
    seed: u64,
) -> Result<BootstrapInterval>
where
    F: Fn(&Sample) -> Result<f64> + Sync,
{
    bootstrap_sample(metric, &align(risks, outcomes)?, b, seed)
}
