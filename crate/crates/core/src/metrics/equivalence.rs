use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::RiskTable;

use super::bootstrap::{interval, resampled_values};
use super::kde::{kde, silverman_bandwidth};
use super::{align, c_index_sample, Sample, SurvivalOutcomes};

pub const DEFAULT_DELTA: f64 = 0.01;
const GRID_POINTS: usize = 201;

/// Paired bootstrap comparison of two risk tables on the same subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `C(a) - C(b)` on the full sample.
    pub point_difference: f64,
    /// Mean of the defined resampled differences.
    pub mean_difference: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub delta: f64,
    /// Interval lies strictly inside `(-delta, delta)`.
    pub equivalent: bool,
    pub resamples: usize,
    pub undefined: usize,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Bootstrap the C-index difference between two scorings of one cohort.
/// Each resample draws one subject index set shared by both tables.
pub fn paired_difference_analysis(
    a: &RiskTable,
    b: &RiskTable,
    outcomes: &SurvivalOutcomes,
    resamples: usize,
    delta: f64,
    seed: u64,
) -> Result<EquivalenceReport> {
    if resamples == 0 {
        return Err(Error::Argument("bootstrap needs at least one resample".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("equivalence bound must be positive, got {delta}")));
    }
    if a.len() != b.len() || a.entries.iter().any(|e| b.get(&e.id).is_none()) {
        return Err(Error::Argument("paired risk tables cover different subjects".into()));
    }
    let sa = align(a, outcomes)?;
    let sb = Sample {
        risk: a.entries.iter().map(|e| b.get(&e.id).expect("checked above").risk).collect(),
        ..sa.clone()
    };
    let diff = |x: &Sample, y: &Sample| -> Result<f64> { Ok(c_index_sample(x)? - c_index_sample(y)?) };
    let point = diff(&sa, &sb)?;
    let values = resampled_values(sa.len(), resamples, seed, |idx| diff(&sa.take(idx), &sb.take(idx)))?;
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let ci = interval(point, values)?;
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;

    let bandwidth = silverman_bandwidth(&defined);
    let (lo, hi) = defined
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (lo, hi) = (lo - 3.0 * bandwidth, hi + 3.0 * bandwidth);
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let density = kde(&defined, &grid)?;

    Ok(EquivalenceReport {
        point_difference: point,
        mean_difference: mean,
        ci_lower: ci.lower,
        ci_upper: ci.upper,
        delta,
        equivalent: -delta < ci.lower && ci.upper < delta,
        resamples: ci.resamples,
        undefined: ci.undefined,
        bandwidth,
        grid,
        density,
    })
}
