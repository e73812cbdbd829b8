//! Pairwise comparison contract and the built-in logistic difference ranker.
//!
//! A comparator maps an ordered pair of records to the probability that the
//! first one experiences the event earlier. The built-in ranker scores
//! `sigmoid(w . (phi(x_i) - phi(x_j)))` and is trained by mini-batch gradient
//! descent on the pairwise ranking loss `-sum log p(i, j)` over comparable
//! pairs.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRecord};
use crate::error::{Error, Result};
use crate::featurize::Featurization;
use crate::pairs::{Pair, PairSet};
use crate::seed;
use crate::textualize::OrderPolicy;

/// Probabilities are clamped here before taking logs.
pub const PROB_EPSILON: f64 = 1e-12;

pub const RANKER_FORMAT: &str = "pairsurv-ranker/1";

/// Probability that the first subject of a pair experiences the event earlier.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ComparisonScore(f64);

impl ComparisonScore {
    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(Error::Argument(format!("comparison probability {p} outside [0, 1]")))
        }
    }

    pub fn p_first_earlier(self) -> f64 {
        self.0
    }
}

/// One comparison request: does `subject` experience the event before `anchor`?
///
/// `policy` and `seed` control prompt ordering for text-based backends and are
/// ignored by comparators that are antisymmetric by construction.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonQuery<'a> {
    pub subject: &'a CohortRecord,
    pub anchor: &'a CohortRecord,
    pub policy: OrderPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComparisonOutcome {
    Score(ComparisonScore),
    /// The backend answered but the answer could not be decoded.
    Indeterminate(String),
}

/// Anything that can judge which of two records events first.
pub trait Comparator: Sync {
    /// Answer every query. Results are aligned with `queries` by index.
    fn compare_many(&self, queries: &[ComparisonQuery<'_>]) -> Vec<Result<ComparisonOutcome>>;
}

/// Compare a single ordered pair.
pub fn compare(model: &dyn Comparator, first: &CohortRecord, second: &CohortRecord) -> Result<ComparisonScore> {
    let query = ComparisonQuery { subject: first, anchor: second, policy: OrderPolicy::Shuffle, seed: 0 };
    match model.compare_many(&[query]).pop() {
        Some(Ok(ComparisonOutcome::Score(s))) => Ok(s),
        Some(Ok(ComparisonOutcome::Indeterminate(msg))) => Err(Error::Parse(msg)),
        Some(Err(e)) => Err(e),
        None => Err(Error::Argument("comparator returned no result".into())),
    }
}

/// Logistic function written so that `sigmoid(z) + sigmoid(-z) == 1` exactly.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - 1.0 / (1.0 + z.exp())
    }
}

/// `-ln sigmoid(z)`, stable for large |z|.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ranking loss and its gradient with respect to `weights`.
///
/// Each element of `diffs` is `phi(x_i) - phi(x_j)` for a pair in which `i`
/// events first. Pairs whose probability falls below the clamp contribute
/// a constant `-ln(1e-12)` and no gradient.
pub fn rank_loss_gradient(weights: &[f64], diffs: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let cap = -PROB_EPSILON.ln();
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for d in diffs {
        let z = dot(weights, d);
        let l = neg_log_sigmoid(z);
        if l >= cap {
            loss += cap;
            continue;
        }
        loss += l;
        // d/dz [-ln sigmoid(z)] = -sigmoid(-z)
        let g = -sigmoid(-z);
        for (gk, dk) in grad.iter_mut().zip(d) {
            *gk += g * dk;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 0.5, batch_size: 64, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: TrainConfig,
    pub n_pairs: usize,
    /// Mean per-pair loss over all training pairs, one entry per epoch, with
    /// the value at initialization first.
    pub loss_trace: Vec<f64>,
}

/// Linear risk model scored through pairwise differences. There is no bias:
/// it cancels in the difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub featurization: Featurization,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMetadata>,
}

#[derive(Serialize, Deserialize)]
struct RankerFile {
    format: String,
    #[serde(flatten)]
    model: RankerModel,
}

impl RankerModel {
    pub fn new(featurization: Featurization, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != featurization.dimension() {
            return Err(Error::Argument(format!(
                "weight dimension {} does not match featurization dimension {}",
                weights.len(),
                featurization.dimension()
            )));
        }
        Ok(Self { featurization, weights, training: None })
    }

    pub fn zeros(featurization: Featurization) -> Self {
        let d = featurization.dimension();
        Self { featurization, weights: vec![0.0; d], training: None }
    }

    /// Linear predictor `w . phi(x)`. Larger means higher risk.
    pub fn score(&self, record: &CohortRecord) -> Result<f64> {
        Ok(dot(&self.weights, &self.featurization.transform(record)?))
    }

    pub fn difference(&self, first: &CohortRecord, second: &CohortRecord) -> Result<Vec<f64>> {
        let a = self.featurization.transform(first)?;
        let b = self.featurization.transform(second)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
    }

    pub fn probability(&self, first: &CohortRecord, second: &CohortRecord) -> Result<f64> {
        Ok(sigmoid(dot(&self.weights, &self.difference(first, second)?)))
    }

    /// `-sum log p(i, j)` over `pairs`, resolving ids in `cohort`.
    pub fn rank_loss(&self, cohort: &Cohort, pairs: &[Pair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Argument("rank loss of an empty batch".into()));
        }
        let diffs = pair_differences(&self.featurization, cohort, pairs)?;
        Ok(rank_loss_gradient(&self.weights, &diffs).0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RankerFile {
            format: RANKER_FORMAT.into(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RankerFile = serde_json::from_str(text)?;
        if file.format != RANKER_FORMAT {
            return Err(Error::Argument(format!("unsupported model format {:?}", file.format)));
        }
        let m = file.model;
        Self::new(m.featurization, m.weights).map(|r| Self { training: m.training, ..r })
    }
}

impl Comparator for RankerModel {
    fn compare_many(&self, queries: &[ComparisonQuery<'_>]) -> Vec<Result<ComparisonOutcome>> {
        queries
            .iter()
            .map(|q| {
                let p = self.probability(q.subject, q.anchor)?;
                Ok(ComparisonOutcome::Score(ComparisonScore::new(p)?))
            })
            .collect()
    }
}

fn pair_differences(featurization: &Featurization, cohort: &Cohort, pairs: &[Pair]) -> Result<Vec<Vec<f64>>> {
    let index: HashMap<&str, &CohortRecord> =
        cohort.records().iter().map(|r| (r.id.as_str(), r)).collect();
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut encoded = |id: &str| -> Result<Vec<f64>> {
        let rec = index
            .get(id)
            .ok_or_else(|| Error::Argument(format!("pair references unknown id {id:?}")))?;
        if let Some(v) = cache.get(rec.id.as_str()) {
            return Ok(v.clone());
        }
        let v = featurization.transform(rec)?;
        cache.insert(rec.id.as_str(), v.clone());
        Ok(v)
    };
    pairs
        .iter()
        .map(|p| {
            let a = encoded(&p.earlier)?;
            let b = encoded(&p.later)?;
            Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
        })
        .collect()
}

/// Fit a ranker on `pairs` drawn from `cohort`.
///
/// Featurization statistics come from `cohort`. Weights start at zero and
/// each mini-batch step moves them by `learning_rate` times the mean
/// per-pair gradient. Batch order is shuffled per epoch from the seed.
pub fn train_ranker(pairs: &PairSet, cohort: &Cohort, config: &TrainConfig) -> Result<RankerModel> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Argument("no training pairs".into()));
    }
    let featurization = Featurization::fit(cohort, true);
    featurization.ensure_informative()?;
    let diffs = pair_differences(&featurization, cohort, &pairs.pairs)?;
    let n = diffs.len() as f64;

    let mut weights = vec![0.0; featurization.dimension()];
    let mut loss_trace = vec![rank_loss_gradient(&weights, &diffs).0 / n];
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(seed::derive(config.seed, epoch as u64)));
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| diffs[k].clone()));
            let (_, grad) = rank_loss_gradient(&weights, &batch);
            let step = config.learning_rate / chunk.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
        loss_trace.push(rank_loss_gradient(&weights, &diffs).0 / n);
    }

    Ok(RankerModel {
        featurization,
        weights,
        training: Some(TrainingMetadata { config: config.clone(), n_pairs: diffs.len(), loss_trace }),
    })
}
