//! Discrimination metrics, resampling intervals, survival curves and
//! equivalence analysis for risk tables.

mod auc;
mod bootstrap;
mod concordance;
mod equivalence;
mod kde;
mod km;
mod strata;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::inference::RiskTable;

pub use auc::{horizon_auc, horizon_auc_sample, HorizonClass};
pub use bootstrap::{bootstrap_ci, bootstrap_sample, percentile, BootstrapInterval};
pub use concordance::{c_index, c_index_sample};
pub use equivalence::{paired_difference_analysis, EquivalenceReport, DEFAULT_DELTA};
pub use kde::{kde, silverman_bandwidth, DEGENERATE_BANDWIDTH};
pub use km::{km_curve, km_curve_from, KmCurve, KmPoint};
pub use strata::{median, stratify_by_median, RiskGroup, Stratification};

/// Observed `(time, event)` per subject id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcomes {
    rows: Vec<(String, f64, bool)>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl SurvivalOutcomes {
    pub fn new(rows: Vec<(String, f64, bool)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, (id, _, _)) in rows.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate outcome id {id}")));
            }
        }
        Ok(Self { rows, index })
    }

    pub fn from_cohort(cohort: &Cohort) -> Self {
        let rows = cohort.records().iter().map(|r| (r.id.clone(), r.time, r.event)).collect();
        // ids in a Cohort are unique
        Self::new(rows).expect("cohort ids are unique")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<(f64, bool)> {
        self.index.get(id).map(|&i| (self.rows[i].1, self.rows[i].2))
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.2).collect()
    }
}

/// Risks and outcomes aligned by subject.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    pub risk: Vec<f64>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.risk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risk.is_empty()
    }

    /// Rows selected by `idx`, with repetition allowed.
    pub fn take(&self, idx: &[usize]) -> Sample {
        Sample {
            risk: idx.iter().map(|&i| self.risk[i]).collect(),
            time: idx.iter().map(|&i| self.time[i]).collect(),
            event: idx.iter().map(|&i| self.event[i]).collect(),
        }
    }
}

/// Join a risk table with outcomes. The id sets must match exactly.
pub fn align(risks: &RiskTable, outcomes: &SurvivalOutcomes) -> Result<Sample> {
    if risks.len() != outcomes.len() {
        return Err(Error::Argument(format!(
            "risk table has {} subjects but outcomes have {}",
            risks.len(),
            outcomes.len()
        )));
    }
    let mut s = Sample::default();
    for e in &risks.entries {
        let (t, ev) = outcomes
            .get(&e.id)
            .ok_or_else(|| Error::Argument(format!("no outcome for subject {}", e.id)))?;
        s.risk.push(e.risk);
        s.time.push(t);
        s.event.push(ev);
    }
    Ok(s)
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub point: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl MetricReport {
    pub fn from_interval(metric: &str, ci: &BootstrapInterval, n: usize, horizon: Option<f64>) -> Self {
        Self {
            metric: metric.to_string(),
            point: ci.point,
            ci_lower: ci.lower,
            ci_upper: ci.upper,
            n,
            horizon,
        }
    }
}
