use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::RiskTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub threshold: f64,
    pub assignments: Vec<(String, RiskGroup)>,
}

impl Stratification {
    pub fn count(&self, group: RiskGroup) -> usize {
        self.assignments.iter().filter(|a| a.1 == group).count()
    }
}

/// Median; the mean of the middle two for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

/// Split test subjects at the median training risk; strictly above is high.
pub fn stratify_by_median(train_risks: &RiskTable, test_risks: &RiskTable) -> Result<Stratification> {
    if test_risks.is_empty() {
        return Err(Error::Argument("test risk table is empty".into()));
    }
    let threshold = median(&train_risks.risks())
        .ok_or_else(|| Error::Argument("training risk table is empty".into()))?;
    let assignments = test_risks
        .entries
        .iter()
        .map(|e| (e.id.clone(), if e.risk > threshold { RiskGroup::High } else { RiskGroup::Low }))
        .collect();
    Ok(Stratification { threshold, assignments })
}
