//! Numeric encoding of cohort features.
//!
//! Numeric columns are centered and scaled by training statistics, categorical
//! columns get reference (drop-first) indicator coding. Missing cells are
//! imputed with the training mean (numeric) or mode (categorical).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRecord, FeatureValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric {
        column: String,
        center: f64,
        scale: f64,
        fill: f64,
        constant: bool,
    },
    Categorical {
        column: String,
        reference: String,
        /// Non-reference levels, one indicator each.
        levels: Vec<String>,
        fill: String,
    },
}

impl ColumnEncoding {
    pub fn column(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { column, .. } | ColumnEncoding::Categorical { column, .. } => column,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { levels, .. } => levels.len(),
        }
    }

    fn informative(&self) -> bool {
        match self {
            ColumnEncoding::Numeric { constant, .. } => !constant,
            ColumnEncoding::Categorical { levels, .. } => !levels.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurization {
    pub columns: Vec<ColumnEncoding>,
    pub standardized: bool,
}

impl Featurization {
    /// Learn encodings from `cohort`. With `standardize == false` numeric
    /// columns pass through unchanged (useful when coefficients must be read
    /// on the original scale).
    pub fn fit(cohort: &Cohort, standardize: bool) -> Self {
        let columns = cohort
            .schema()
            .iter()
            .map(|name| fit_column(cohort, name, standardize))
            .collect();
        Self { columns, standardized: standardize }
    }

    pub fn dimension(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Error unless at least one column carries variation.
    pub fn ensure_informative(&self) -> Result<()> {
        if self.columns.iter().any(ColumnEncoding::informative) {
            Ok(())
        } else {
            Err(Error::DegenerateFeaturization(
                "every feature column is constant in the training data".into(),
            ))
        }
    }

    pub fn transform(&self, record: &CohortRecord) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dimension());
        for enc in &self.columns {
            let value = record.feature(enc.column()).ok_or_else(|| {
                Error::Argument(format!(
                    "record {} lacks featurized column {:?}",
                    record.id,
                    enc.column()
                ))
            })?;
            match enc {
                ColumnEncoding::Numeric { center, scale, fill, constant, column } => {
                    if *constant {
                        out.push(0.0);
                        continue;
                    }
                    let x = match value {
                        FeatureValue::Missing => *fill,
                        v => v.as_number().ok_or_else(|| {
                            Error::Argument(format!(
                                "record {}: column {column:?} expects a number, got {v}",
                                record.id
                            ))
                        })?,
                    };
                    out.push((x - center) / scale);
                }
                ColumnEncoding::Categorical { levels, fill, .. } => {
                    let label = match value {
                        FeatureValue::Missing => fill.clone(),
                        v => v.to_string(),
                    };
                    out.extend(levels.iter().map(|l| if *l == label { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    pub fn transform_all(&self, cohort: &Cohort) -> Result<Vec<Vec<f64>>> {
        cohort.records().iter().map(|r| self.transform(r)).collect()
    }
}

fn fit_column(cohort: &Cohort, name: &str, standardize: bool) -> ColumnEncoding {
    let values: Vec<&FeatureValue> = cohort
        .records()
        .iter()
        .filter_map(|r| r.feature(name))
        .filter(|v| !v.is_missing())
        .collect();

    let numbers: Option<Vec<f64>> = values.iter().map(|v| v.as_number()).collect();
    if let Some(xs) = numbers {
        let n = xs.len() as f64;
        let mean = if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / n };
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let constant = !(sd > 0.0);
        let (center, scale) = if standardize && !constant { (mean, sd) } else { (0.0, 1.0) };
        return ColumnEncoding::Numeric {
            column: name.to_string(),
            center,
            scale,
            fill: mean,
            constant,
        };
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in &values {
        *counts.entry(v.to_string()).or_default() += 1;
    }
    // BTreeMap iteration is sorted, so ties in the mode resolve to the
    // lexicographically smallest level.
    let fill = counts
        .iter()
        .fold((String::new(), 0usize), |best, (level, &c)| {
            if c > best.1 { (level.clone(), c) } else { best }
        })
        .0;
    let mut levels: Vec<String> = counts.into_keys().collect();
    let reference = if levels.is_empty() { String::new() } else { levels.remove(0) };
    ColumnEncoding::Categorical {
        column: name.to_string(),
        reference,
        levels,
        fill,
    }
}
