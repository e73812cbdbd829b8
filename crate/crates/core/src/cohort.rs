//! Tabular survival cohorts: parsing, validation, and the train/test split.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Literal used for missing values when a record is rendered as text.
pub const MISSING_TEXT: &str = "unknown";

/// One feature cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Bool(bool),
    Text(String),
    Missing,
}

impl FeatureValue {
    /// Interpret a raw cell. Empty cells and the usual NA spellings are missing.
    pub fn parse(raw: &str) -> Self {
        let s = raw.trim();
        if s.is_empty() {
            return FeatureValue::Missing;
        }
        match s.to_ascii_lowercase().as_str() {
            "na" | "n/a" | "nan" | "null" | "none" | "unknown" => return FeatureValue::Missing,
            "true" => return FeatureValue::Bool(true),
            "false" => return FeatureValue::Bool(false),
            _ => {}
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => FeatureValue::Number(v),
            _ => FeatureValue::Text(s.to_string()),
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, FeatureValue::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            FeatureValue::Number(v) => Some(*v),
            FeatureValue::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureValue {
    /// Numbers use the shortest round-trip form, so `79.0` prints as `79`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Number(v) => write!(f, "{v}"),
            FeatureValue::Bool(true) => f.write_str("yes"),
            FeatureValue::Bool(false) => f.write_str("no"),
            FeatureValue::Text(s) => f.write_str(s),
            FeatureValue::Missing => f.write_str(MISSING_TEXT),
        }
    }
}

/// A single subject: covariates, event indicator and follow-up time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub id: String,
    pub features: IndexMap<String, FeatureValue>,
    pub event: bool,
    pub time: f64,
}

impl CohortRecord {
    pub fn new(
        id: impl Into<String>,
        features: IndexMap<String, FeatureValue>,
        event: bool,
        time: f64,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("record id must be non-empty".into()));
        }
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::Validation(format!(
                "record {id}: time must be positive and finite, got {time}"
            )));
        }
        Ok(Self { id, features, event, time })
    }

    pub fn feature(&self, column: &str) -> Option<&FeatureValue> {
        self.features.get(column)
    }
}

/// Column roles for a delimited cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub id: String,
    pub time: String,
    pub event: String,
    /// Feature columns in order; `None` means every remaining column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_unit: Option<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            event: "event".into(),
            features: None,
            time_unit: None,
        }
    }
}

impl SchemaConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A validated, immutable set of records sharing one feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<CohortRecord>,
    schema: Vec<String>,
    time_unit: String,
}

impl Cohort {
    pub fn new(records: Vec<CohortRecord>, schema: Vec<String>, time_unit: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id {}", r.id)));
            }
            if r.features.len() != schema.len()
                || r.features.keys().zip(&schema).any(|(a, b)| a != b)
            {
                return Err(Error::Validation(format!(
                    "record {}: feature columns do not match the cohort schema",
                    r.id
                )));
            }
        }
        Ok(Self { records, schema, time_unit: time_unit.into() })
    }

    pub fn records(&self) -> &[CohortRecord] {
        &self.records
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn time_unit(&self) -> &str {
        &self.time_unit
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CohortRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// A new cohort holding the records for which `keep` is true, in order.
    pub fn filter(&self, keep: impl Fn(&CohortRecord) -> bool) -> Cohort {
        Cohort {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            schema: self.schema.clone(),
            time_unit: self.time_unit.clone(),
        }
    }
}

fn parse_event(raw: &str, id: &str) -> Result<bool> {
    match raw.trim().parse::<f64>() {
        Ok(0.0) => Ok(false),
        Ok(1.0) => Ok(true),
        _ => Err(Error::Validation(format!(
            "record {id}: event must be 0 or 1, got {raw:?}"
        ))),
    }
}

/// Read a delimited cohort file. The first row is the header.
pub fn parse_cohort<R: Read>(source: R, schema: &SchemaConfig, delimiter: u8) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let id_col = position(&schema.id)?;
    let time_col = position(&schema.time)?;
    let event_col = position(&schema.event)?;

    let feature_names: Vec<String> = match &schema.features {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_col, time_col, event_col].contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let feature_cols = feature_names
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let row_data = result?;
        let cell = |i: usize| row_data.get(i).unwrap_or("");
        let id = cell(id_col).to_string();
        if id.is_empty() {
            return Err(Error::Validation(format!("row {}: empty id", row + 1)));
        }
        let time: f64 = cell(time_col).parse().map_err(|_| {
            Error::Validation(format!("record {id}: time {:?} is not a number", cell(time_col)))
        })?;
        let event = parse_event(cell(event_col), &id)?;
        let features = feature_names
            .iter()
            .zip(&feature_cols)
            .map(|(name, &col)| (name.clone(), FeatureValue::parse(cell(col))))
            .collect();
        records.push(CohortRecord::new(id, features, event, time)?);
    }
    Cohort::new(
        records,
        feature_names,
        schema.time_unit.clone().unwrap_or_else(|| "time".into()),
    )
}

/// Write a cohort using the column names of `schema`.
pub fn write_cohort<W: Write>(cohort: &Cohort, schema: &SchemaConfig, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![schema.id.clone(), schema.time.clone(), schema.event.clone()];
    header.extend(cohort.schema().iter().cloned());
    w.write_record(&header)?;
    for r in cohort.records() {
        let mut row = vec![
            r.id.clone(),
            r.time.to_string(),
            if r.event { "1".into() } else { "0".into() },
        ];
        row.extend(r.features.values().map(|v| match v {
            FeatureValue::Missing => String::new(),
            FeatureValue::Bool(b) => b.to_string(),
            other => other.to_string(),
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Deterministic train/test split.
///
/// Ids are sorted, shuffled with `seed`, and the first
/// `round(test_fraction * n)` become the test set. Each side keeps the
/// input row order.
pub fn split_cohort(cohort: &Cohort, test_fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if cohort.is_empty() {
        return Err(Error::Argument("cannot split an empty cohort".into()));
    }
    let mut ids: Vec<&str> = cohort.records().iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    ids.shuffle(&mut seed::rng(seed));
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    let test_ids: HashSet<&str> = ids[..n_test].iter().copied().collect();
    let test = cohort.filter(|r| test_ids.contains(r.id.as_str()));
    let train = cohort.filter(|r| !test_ids.contains(r.id.as_str()));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "id,time,event,age\np1,3.5,1,70\np2,10,0,55\n";

    fn parse(text: &str) -> Result<Cohort> {
        parse_cohort(text.as_bytes(), &SchemaConfig::default(), b',')
    }

    fn numbered(n: usize) -> Cohort {
        let records = (0..n)
            .map(|i| {
                let mut f = IndexMap::new();
                f.insert("x".to_string(), FeatureValue::Number(i as f64));
                CohortRecord::new(format!("r{i:03}"), f, i % 2 == 0, 1.0 + i as f64).unwrap()
            })
            .collect();
        Cohort::new(records, vec!["x".into()], "days").unwrap()
    }

    #[test]
    fn parses_two_rows() {
        let c = parse(SMALL).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.schema(), ["age".to_string()]);
        assert_eq!(c.records()[0].id, "p1");
        assert!(c.records()[0].event);
        assert_eq!(c.records()[1].feature("age"), Some(&FeatureValue::Number(55.0)));
    }

    #[test]
    fn negative_time_names_the_row() {
        let err = parse("id,time,event,age\nbad,-1,1,70\n").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("bad")), "{err}");
    }

    #[test]
    fn missing_event_column_is_schema_error() {
        let err = parse("id,time,age\np1,3,70\n").unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn event_outside_binary_rejected() {
        assert!(matches!(parse("id,time,event\np1,3,2\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(
            parse("id,time,event\np1,3,1\np1,4,0\n"),
            Err(Error::Validation(ref m)) if m.contains("duplicate")
        ));
    }

    #[test]
    fn explicit_feature_list_and_missing_values() {
        let schema = SchemaConfig {
            features: Some(vec!["sex".into()]),
            ..SchemaConfig::default()
        };
        let c = parse_cohort("id,time,event,age,sex\np1,3,1,70,\n".as_bytes(), &schema, b',').unwrap();
        assert_eq!(c.schema(), ["sex".to_string()]);
        assert!(c.records()[0].feature("sex").unwrap().is_missing());
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let (train, test) = split_cohort(&numbered(10), 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train, test) = split_cohort(&numbered(5), 0.2, 99).unwrap();
        assert_eq!((train.len(), test.len()), (4, 1));
    }

    #[test]
    fn split_is_deterministic_and_order_free() {
        let c = numbered(40);
        let a = split_cohort(&c, 0.2, 5).unwrap();
        let b = split_cohort(&c, 0.2, 5).unwrap();
        assert_eq!(a, b);

        let mut reversed: Vec<_> = c.records().to_vec();
        reversed.reverse();
        let c_rev = Cohort::new(reversed, c.schema().to_vec(), "days").unwrap();
        let (_, test_rev) = split_cohort(&c_rev, 0.2, 5).unwrap();
        let mut x: Vec<_> = a.1.records().iter().map(|r| r.id.clone()).collect();
        let mut y: Vec<_> = test_rev.records().iter().map(|r| r.id.clone()).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(matches!(split_cohort(&numbered(4), 1.0, 0), Err(Error::Argument(_))));
        assert!(matches!(split_cohort(&numbered(4), 0.0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn write_then_parse_preserves_records() {
        let c = parse("id,time,event,age,flag\np1,3.5,1,70,true\np2,10,0,,false\n").unwrap();
        let mut buf = Vec::new();
        write_cohort(&c, &SchemaConfig::default(), &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap().records(), c.records());
    }

    proptest::proptest! {
        #[test]
        fn split_partitions(n in 1usize..60, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let c = numbered(n);
            let (train, test) = split_cohort(&c, frac, seed).unwrap();
            proptest::prop_assert_eq!(train.len() + test.len(), n);
            proptest::prop_assert_eq!(test.len(), (frac * n as f64).round() as usize);
            for r in test.records() {
                proptest::prop_assert!(train.get(&r.id).is_none());
            }
        }
    }
}
