//! Comparable pairs and nested case-control sampling.
//!
//! A pair `(i, j)` is comparable when `i` had an observed event strictly
//! before `j`'s follow-up ended. These are the only pairs whose ordering is
//! known under right censoring.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub earlier: String,
    pub later: String,
}

/// Ordered comparable pairs, sorted by earlier id then later id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    fn from_unsorted(mut pairs: Vec<Pair>) -> Self {
        pairs.sort_unstable_by(|x, y| x.earlier.cmp(&y.earlier).then_with(|| x.later.cmp(&y.later)));
        pairs.dedup();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pair> {
        self.pairs.iter()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["earlier_id", "later_id"])?;
        for p in &self.pairs {
            w.write_record([&p.earlier, &p.later])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`PairSet::write_csv`]. Ids are not checked against a cohort.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["earlier_id", "later_id"] {
            return Err(Error::Schema(format!("pair file header must be earlier_id,later_id, got {headers:?}")));
        }
        let mut pairs = Vec::new();
        for row in r.records() {
            let row = row?;
            pairs.push(Pair { earlier: row[0].to_string(), later: row[1].to_string() });
        }
        Ok(Self::from_unsorted(pairs))
    }
}

/// True when `(i, j)` is comparable.
pub fn is_comparable(i: &CohortRecord, j: &CohortRecord) -> bool {
    i.event && i.time < j.time
}

/// Which subjects may serve as controls for an event case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPool {
    /// Anyone with longer follow-up, censored or not.
    #[default]
    AllSubjects,
    /// Only subjects with an observed event at a later time.
    EventsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Controls drawn per event case.
    pub n_controls: usize,
    pub seed: u64,
    #[serde(default)]
    pub control_pool: ControlPool,
}

impl SamplingConfig {
    pub fn new(n_controls: usize, seed: u64) -> Result<Self> {
        let c = Self { n_controls, seed, control_pool: ControlPool::AllSubjects };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_controls == 0 {
            return Err(Error::Argument("n_controls must be at least 1".into()));
        }
        Ok(())
    }
}

/// Indices of `cohort` sorted by time, used to find everyone with a later time.
fn by_time(cohort: &Cohort) -> Vec<&CohortRecord> {
    let mut v: Vec<&CohortRecord> = cohort.records().iter().collect();
    v.sort_by(|a, b| a.time.total_cmp(&b.time));
    v
}

fn later_than<'s, 'a>(sorted: &'s [&'a CohortRecord], t: f64) -> &'s [&'a CohortRecord] {
    let start = sorted.partition_point(|r| r.time <= t);
    &sorted[start..]
}

/// Every comparable pair of `cohort`.
pub fn comparable_pairs(cohort: &Cohort) -> PairSet {
    let sorted = by_time(cohort);
    let pairs = cohort
        .records()
        .iter()
        .filter(|r| r.event)
        .flat_map(|case| {
            later_than(&sorted, case.time).iter().map(move |ctrl| Pair {
                earlier: case.id.clone(),
                later: ctrl.id.clone(),
            })
        })
        .collect();
    PairSet::from_unsorted(pairs)
}

/// For each event case, up to `n_controls` controls with strictly longer
/// follow-up, drawn uniformly without replacement.
///
/// Each case uses its own RNG derived from the seed and its id, so the
/// result does not depend on row order.
pub fn sample_case_controls(cohort: &Cohort, config: &SamplingConfig) -> Result<PairSet> {
    config.validate()?;
    let sorted = by_time(cohort);
    let mut pairs = Vec::new();
    for case in cohort.records().iter().filter(|r| r.event) {
        let mut pool: Vec<&CohortRecord> = later_than(&sorted, case.time)
            .iter()
            .copied()
            .filter(|r| config.control_pool == ControlPool::AllSubjects || r.event)
            .collect();
        pool.sort_unstable_by(|a, b| a.id.cmp(&b.id));
        let chosen: Vec<&CohortRecord> = if pool.len() <= config.n_controls {
            pool
        } else {
            let mut rng = seed::rng(seed::derive_str(config.seed, &case.id));
            let mut idx = rand::seq::index::sample(&mut rng, pool.len(), config.n_controls).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| pool[k]).collect()
        };
        pairs.extend(chosen.into_iter().map(|ctrl| Pair {
            earlier: case.id.clone(),
            later: ctrl.id.clone(),
        }));
    }
    Ok(PairSet::from_unsorted(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use std::collections::HashMap;

    fn cohort(rows: &[(&str, bool, f64)]) -> Cohort {
        let records = rows
            .iter()
            .map(|(id, e, t)| CohortRecord::new(*id, IndexMap::new(), *e, *t).unwrap())
            .collect();
        Cohort::new(records, vec![], "days").unwrap()
    }

    fn four() -> Cohort {
        cohort(&[("A", true, 2.0), ("B", false, 5.0), ("C", true, 5.0), ("D", false, 1.0)])
    }

    fn ids(p: &PairSet) -> Vec<(&str, &str)> {
        p.iter().map(|p| (p.earlier.as_str(), p.later.as_str())).collect()
    }

    /// Brute force over all n^2 ordered pairs.
    fn brute(c: &Cohort) -> Vec<(String, String)> {
        let mut v = Vec::new();
        for i in c.records() {
            for j in c.records() {
                if i.event && i.time < j.time {
                    v.push((i.id.clone(), j.id.clone()));
                }
            }
        }
        v.sort();
        v
    }

    #[test]
    fn four_record_example() {
        let c = four();
        assert_eq!(ids(&comparable_pairs(&c)), vec![("A", "B"), ("A", "C")]);
        let b = brute(&c);
        assert_eq!(b, vec![("A".into(), "B".into()), ("A".into(), "C".into())]);
    }

    #[test]
    fn censored_only_and_ties() {
        assert!(comparable_pairs(&cohort(&[("a", false, 1.0), ("b", false, 2.0)])).is_empty());
        assert!(comparable_pairs(&cohort(&[("a", true, 3.0), ("b", true, 3.0)])).is_empty());
    }

    #[test]
    fn sampling_takes_whole_small_pool() {
        let c = four();
        let s = sample_case_controls(&c, &SamplingConfig::new(2, 9).unwrap()).unwrap();
        assert_eq!(ids(&s), vec![("A", "B"), ("A", "C")]);
        let s = sample_case_controls(&c, &SamplingConfig::new(5, 9).unwrap()).unwrap();
        assert_eq!(s, comparable_pairs(&c));
    }

    #[test]
    fn single_control_from_pool() {
        let c = four();
        for seed in 0..20 {
            let s = sample_case_controls(&c, &SamplingConfig::new(1, seed).unwrap()).unwrap();
            assert_eq!(s.len(), 1);
            assert_eq!(s.pairs[0].earlier, "A");
            assert!(["B", "C"].contains(&s.pairs[0].later.as_str()));
        }
    }

    #[test]
    fn events_only_pool() {
        let c = four();
        let cfg = SamplingConfig { n_controls: 5, seed: 0, control_pool: ControlPool::EventsOnly };
        assert_eq!(ids(&sample_case_controls(&c, &cfg).unwrap()), vec![("A", "C")]);
    }

    #[test]
    fn zero_controls_rejected() {
        assert!(SamplingConfig::new(0, 1).is_err());
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        comparable_pairs(&four()).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "earlier_id,later_id\nA,B\nA,C\n");
        assert_eq!(PairSet::read_csv(buf.as_slice()).unwrap(), comparable_pairs(&four()));
        assert!(PairSet::read_csv("a,b\nA,B\n".as_bytes()).is_err());
    }

    #[test]
    fn controls_selected_uniformly() {
        // Case at t=0.5 with 5 eligible controls, N=2: each is chosen with p=0.4.
        let c = cohort(&[
            ("case", true, 0.5),
            ("c1", false, 1.0),
            ("c2", false, 2.0),
            ("c3", true, 3.0),
            ("c4", false, 4.0),
            ("c5", false, 5.0),
        ]);
        let seeds = 10_000u64;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for seed in 0..seeds {
            let s = sample_case_controls(&c, &SamplingConfig::new(2, seed).unwrap()).unwrap();
            for p in s.iter().filter(|p| p.earlier == "case") {
                *counts.entry(p.later.clone()).or_default() += 1;
            }
        }
        let (n, p) = (seeds as f64, 0.4);
        let sigma = (n * p * (1.0 - p)).sqrt();
        for id in ["c1", "c2", "c3", "c4", "c5"] {
            let k = counts[id] as f64;
            assert!((k - n * p).abs() <= 3.0 * sigma, "{id}: {k}");
        }
    }

    proptest::proptest! {
        #[test]
        fn sampled_pairs_are_comparable(
            rows in proptest::collection::vec((proptest::prelude::any::<bool>(), 1u8..8), 1..15),
            n in 1usize..4,
            seed in 0u64..500,
        ) {
            let names: Vec<String> = (0..rows.len()).map(|i| format!("r{i}")).collect();
            let spec: Vec<(&str, bool, f64)> =
                rows.iter().zip(&names).map(|((e, t), id)| (id.as_str(), *e, f64::from(*t))).collect();
            let c = cohort(&spec);
            let all = comparable_pairs(&c);
            let s = sample_case_controls(&c, &SamplingConfig::new(n, seed).unwrap()).unwrap();
            for p in s.iter() {
                proptest::prop_assert!(all.pairs.contains(p));
            }
        }
    }
}
