use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::bootstrap::percentile;

pub const DEGENERATE_BANDWIDTH: f64 = 1e-6;

/// Silverman's rule `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
///
/// Falls back to the sd when the IQR is zero, and to
/// [`DEGENERATE_BANDWIDTH`] when every sample is equal.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return DEGENERATE_BANDWIDTH;
    }
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = percentile(&sorted, 0.75) - percentile(&sorted, 0.25);
    let spread = match sd.min(iqr / 1.34) {
        a if a > 0.0 => a,
        _ => sd,
    };
    if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        DEGENERATE_BANDWIDTH
    }
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Argument("kernel density needs at least one sample".into()));
    }
    let h = silverman_bandwidth(samples);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| {
                    let u = (x - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect())
}
