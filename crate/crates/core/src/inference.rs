//! Anchor-based risk scoring.
//!
//! A test subject is compared against a fixed set of training anchors. Each
//! comparison is thresholded (`p > 0.5` counts as a win) and the risk is the
//! fraction of decodable comparisons the subject wins.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRecord};
use crate::comparator::{Comparator, ComparisonOutcome, ComparisonQuery};
use crate::error::{Error, Result};
use crate::seed;
use crate::textualize::OrderPolicy;

pub const DEFAULT_ANCHORS: usize = 50;
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStrategy {
    /// Uniform over the whole training cohort.
    #[default]
    Random,
    /// Uniform over training subjects with an observed event.
    EventOnly,
}

impl std::str::FromStr for AnchorStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(AnchorStrategy::Random),
            "event_only" | "event-only" => Ok(AnchorStrategy::EventOnly),
            _ => Err(Error::Argument(format!("unknown anchor strategy {s:?}"))),
        }
    }
}

impl fmt::Display for AnchorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorStrategy::Random => "random",
            AnchorStrategy::EventOnly => "event_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<CohortRecord>,
    pub strategy: AnchorStrategy,
    pub seed: u64,
    /// K asked for; `anchors.len()` is smaller when the pool ran out.
    pub requested: usize,
}

impl AnchorSet {
    pub fn k(&self) -> usize {
        self.anchors.len()
    }

    pub fn shortfall(&self) -> bool {
        self.anchors.len() < self.requested
    }

    pub fn contains(&self, id: &str) -> bool {
        self.anchors.iter().any(|a| a.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.anchors.iter().map(|a| a.id.as_str()).collect()
    }
}

/// Draw `k` anchors without replacement from the training cohort.
pub fn select_anchors(train: &Cohort, k: usize, strategy: AnchorStrategy, seed: u64) -> Result<AnchorSet> {
    if k == 0 {
        return Err(Error::Argument("anchor count must be at least 1".into()));
    }
    let mut pool: Vec<&CohortRecord> = train
        .records()
        .iter()
        .filter(|r| strategy == AnchorStrategy::Random || r.event)
        .collect();
    if pool.is_empty() {
        return Err(Error::Argument(format!("no eligible anchors for strategy {strategy}")));
    }
    pool.sort_unstable_by(|a, b| a.id.cmp(&b.id));
    let anchors = if pool.len() <= k {
        pool.into_iter().cloned().collect()
    } else {
        let mut idx = rand::seq::index::sample(&mut seed::rng(seed), pool.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect()
    };
    Ok(AnchorSet { anchors, strategy, seed, requested: k })
}

/// Per-subject risk with its provenance counts.
///
/// For anchor-derived entries `risk == wins / comparisons`. Entries built
/// from an external score (e.g. a Cox linear predictor) have zero counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub id: String,
    pub risk: f64,
    pub wins: usize,
    pub comparisons: usize,
    pub indeterminate: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub entries: Vec<RiskEntry>,
}

impl RiskTable {
    pub fn from_scores<I, S>(scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            entries: scores
                .into_iter()
                .map(|(id, risk)| RiskEntry { id: id.into(), risk, wins: 0, comparisons: 0, indeterminate: 0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RiskEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn risks(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.risk).collect()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["id", "risk", "wins", "comparisons", "indeterminate"])?;
        for e in &self.entries {
            w.write_record([
                e.id.clone(),
                e.risk.to_string(),
                e.wins.to_string(),
                e.comparisons.to_string(),
                e.indeterminate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let entries = r.deserialize().collect::<std::result::Result<Vec<RiskEntry>, _>>()?;
        Ok(Self { entries })
    }
}

fn comparison_seed(seed: u64, subject: &str, anchor: &str) -> u64 {
    seed::derive(seed::derive_str(seed, subject), seed::hash_str(anchor))
}

fn queries<'a>(
    subject: &'a CohortRecord,
    anchors: &'a AnchorSet,
    policy: OrderPolicy,
    seed: u64,
) -> impl Iterator<Item = ComparisonQuery<'a>> {
    anchors.anchors.iter().map(move |a| ComparisonQuery {
        subject,
        anchor: a,
        policy,
        seed: comparison_seed(seed, &subject.id, &a.id),
    })
}

/// Fold one subject's comparison outcomes into a risk entry.
pub fn tally(subject_id: &str, outcomes: Vec<Result<ComparisonOutcome>>) -> Result<RiskEntry> {
    let k = outcomes.len();
    let mut wins = 0;
    let mut indeterminate = 0;
    for o in outcomes {
        match o {
            Ok(ComparisonOutcome::Score(s)) => {
                if s.p_first_earlier() > DECISION_THRESHOLD {
                    wins += 1;
                }
            }
            Ok(ComparisonOutcome::Indeterminate(_)) => indeterminate += 1,
            Err(e) => {
                return Err(Error::Scoring { id: subject_id.to_string(), reason: e.to_string() });
            }
        }
    }
    let comparisons = k - indeterminate;
    if comparisons == 0 {
        return Err(Error::Scoring {
            id: subject_id.to_string(),
            reason: format!("all {k} comparisons were indeterminate"),
        });
    }
    Ok(RiskEntry {
        id: subject_id.to_string(),
        risk: wins as f64 / comparisons as f64,
        wins,
        comparisons,
        indeterminate,
    })
}

/// Risk of one subject against the anchor set.
pub fn risk_score(
    subject: &CohortRecord,
    anchors: &AnchorSet,
    model: &dyn Comparator,
    policy: OrderPolicy,
    seed: u64,
) -> Result<RiskEntry> {
    if anchors.contains(&subject.id) {
        return Err(Error::Argument(format!("subject {} is one of the anchors", subject.id)));
    }
    let qs: Vec<ComparisonQuery<'_>> = queries(subject, anchors, policy, seed).collect();
    tally(&subject.id, model.compare_many(&qs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringFailure {
    pub id: String,
    pub reason: String,
}

/// Scores for a cohort. `failures` lists subjects that could not be scored;
/// a non-empty list means the table is partial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredCohort {
    pub table: RiskTable,
    pub failures: Vec<ScoringFailure>,
}

impl ScoredCohort {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn into_complete(self) -> Result<RiskTable> {
        match self.failures.into_iter().next() {
            None => Ok(self.table),
            Some(f) => Err(Error::Scoring { id: f.id, reason: f.reason }),
        }
    }
}

/// Score every test record against a shared anchor set.
///
/// All comparisons go to the comparator in one call so remote backends can
/// run them concurrently; results are joined by index.
pub fn score_cohort(
    test: &Cohort,
    anchors: &AnchorSet,
    model: &dyn Comparator,
    policy: OrderPolicy,
    seed: u64,
) -> Result<ScoredCohort> {
    let anchor_ids: HashSet<&str> = anchors.ids().into_iter().collect();
    if let Some(r) = test.records().iter().find(|r| anchor_ids.contains(r.id.as_str())) {
        return Err(Error::Argument(format!("test subject {} is one of the anchors", r.id)));
    }
    let k = anchors.k();
    let all: Vec<ComparisonQuery<'_>> = test
        .records()
        .iter()
        .flat_map(|s| queries(s, anchors, policy, seed))
        .collect();
    let mut outcomes = model.compare_many(&all).into_iter();

    let mut scored = ScoredCohort::default();
    for subject in test.records() {
        let chunk: Vec<_> = outcomes.by_ref().take(k).collect();
        match tally(&subject.id, chunk) {
            Ok(entry) => scored.table.entries.push(entry),
            Err(e) => scored.failures.push(ScoringFailure {
                id: subject.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(scored)
}
