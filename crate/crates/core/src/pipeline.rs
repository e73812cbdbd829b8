//! End-to-end composition: pairs, ranker training, anchors and scoring.
//!
//! Each stage draws its own seed from the pipeline seed, so changing one
//! stage's parameters leaves the randomness of the others untouched.

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::comparator::{train_ranker, Comparator, RankerModel, TrainConfig};
use crate::error::Result;
use crate::inference::{score_cohort, select_anchors, AnchorSet, AnchorStrategy, RiskTable, DEFAULT_ANCHORS};
use crate::pairs::{comparable_pairs, sample_case_controls, ControlPool, PairSet, SamplingConfig};
use crate::seed;
use crate::textualize::OrderPolicy;

pub const DEFAULT_N_CONTROLS: usize = 10;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

const PAIRS_TAG: u64 = 1;
const TRAIN_TAG: u64 = 2;
const ANCHOR_TAG: u64 = 3;
const SCORE_TAG: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Controls per event case; `None` keeps every comparable pair.
    pub n_controls: Option<usize>,
    pub control_pool: ControlPool,
    pub train: TrainConfig,
    pub k: usize,
    pub anchor_strategy: AnchorStrategy,
    pub order_policy: OrderPolicy,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_controls: Some(DEFAULT_N_CONTROLS),
            control_pool: ControlPool::default(),
            train: TrainConfig::default(),
            k: DEFAULT_ANCHORS,
            anchor_strategy: AnchorStrategy::default(),
            order_policy: OrderPolicy::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn pairs_seed(&self) -> u64 {
        seed::derive(self.seed, PAIRS_TAG)
    }

    pub fn train_seed(&self) -> u64 {
        seed::derive(self.seed, TRAIN_TAG)
    }

    pub fn anchor_seed(&self) -> u64 {
        seed::derive(self.seed, ANCHOR_TAG)
    }

    pub fn score_seed(&self) -> u64 {
        seed::derive(self.seed, SCORE_TAG)
    }
}

pub fn build_pairs(train: &Cohort, config: &PipelineConfig) -> Result<PairSet> {
    match config.n_controls {
        None => Ok(comparable_pairs(train)),
        Some(n) => {
            let mut sampling = SamplingConfig::new(n, config.pairs_seed())?;
            sampling.control_pool = config.control_pool;
            sample_case_controls(train, &sampling)
        }
    }
}

pub fn fit_ranker(train: &Cohort, config: &PipelineConfig) -> Result<RankerModel> {
    let pairs = build_pairs(train, config)?;
    let train_config = TrainConfig { seed: config.train_seed(), ..config.train.clone() };
    train_ranker(&pairs, train, &train_config)
}

pub fn anchors(train: &Cohort, config: &PipelineConfig) -> Result<AnchorSet> {
    select_anchors(train, config.k, config.anchor_strategy, config.anchor_seed())
}

/// Risk tables for the test cohort and for the training subjects that are
/// not anchors (the latter define the median stratification threshold).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineScores {
    pub anchors: AnchorSet,
    pub test: RiskTable,
    pub train: RiskTable,
}

pub fn score_test(test: &Cohort, anchors: &AnchorSet, model: &dyn Comparator, config: &PipelineConfig) -> Result<RiskTable> {
    score_cohort(test, anchors, model, config.order_policy, config.score_seed())?.into_complete()
}

pub fn score_split(
    train: &Cohort,
    test: &Cohort,
    model: &dyn Comparator,
    config: &PipelineConfig,
) -> Result<PipelineScores> {
    let anchors = anchors(train, config)?;
    let test_risks = score_test(test, &anchors, model, config)?;
    let rest = train.filter(|r| !anchors.contains(&r.id));
    let train_risks = score_test(&rest, &anchors, model, config)?;
    Ok(PipelineScores { anchors, test: test_risks, train: train_risks })
}
