//! Synthetic proportional-hazards cohorts with known linear predictors.

use std::io::Write;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRecord, FeatureValue};
use crate::error::{Error, Result};
use crate::inference::RiskTable;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureDistribution {
    Normal,
    Bernoulli { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub beta: Vec<f64>,
    pub baseline_rate: f64,
    pub censor_rate: f64,
    /// One entry per coefficient. Features are named `x1`, `x2`, ...
    pub features: Vec<FeatureDistribution>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    /// Standard-normal features for every coefficient.
    pub fn normal(n: usize, beta: Vec<f64>, baseline_rate: f64, censor_rate: f64, seed: u64) -> Self {
        let features = vec![FeatureDistribution::Normal; beta.len()];
        Self { n, beta, baseline_rate, censor_rate, features, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Argument(format!("synthetic cohort needs n >= 2, got {}", self.n)));
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate.is_finite())
            || !(self.censor_rate > 0.0 && self.censor_rate.is_finite())
        {
            return Err(Error::Argument("baseline and censoring rates must be positive and finite".into()));
        }
        if self.beta.is_empty() || self.features.len() != self.beta.len() {
            return Err(Error::Argument(format!(
                "{} coefficients but {} feature distributions",
                self.beta.len(),
                self.features.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Argument("coefficients must be finite".into()));
        }
        for f in &self.features {
            if let FeatureDistribution::Bernoulli { q } = f {
                if !(0.0..=1.0).contains(q) {
                    return Err(Error::Argument(format!("Bernoulli q must lie in [0,1], got {q}")));
                }
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        (1..=self.beta.len()).map(|j| format!("x{j}")).collect()
    }
}

/// Draw a cohort. Event times are `Exp(baseline_rate * exp(beta . x))`,
/// censoring times `Exp(censor_rate)`; the second value holds each
/// subject's true linear predictor.
pub fn generate_ph_cohort(config: &SynthConfig) -> Result<(Cohort, RiskTable)> {
    config.validate()?;
    let names = config.feature_names();
    let width = config.n.to_string().len();
    let censor = Exp::new(config.censor_rate).expect("validated rate");
    let mut rng = seed::rng(config.seed);

    let mut records = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let x: Vec<f64> = config
            .features
            .iter()
            .map(|f| match f {
                FeatureDistribution::Normal => StandardNormal.sample(&mut rng),
                FeatureDistribution::Bernoulli { q } => f64::from(u8::from(rng.random_bool(*q))),
            })
            .collect();
        let lp: f64 = x.iter().zip(&config.beta).map(|(a, b)| a * b).sum();
        let rate = config.baseline_rate * lp.exp();
        let t_event: f64 = Exp::new(rate)
            .map_err(|_| Error::Argument(format!("event rate {rate} out of range")))?
            .sample(&mut rng);
        let t_censor: f64 = censor.sample(&mut rng);
        let time = t_event.min(t_censor).max(f64::MIN_POSITIVE);

        let id = format!("s{:0width$}", i + 1);
        let features: IndexMap<String, FeatureValue> =
            names.iter().cloned().zip(x.into_iter().map(FeatureValue::Number)).collect();
        records.push(CohortRecord::new(id.clone(), features, t_event <= t_censor, time)?);
        truth.push((id, lp));
    }
    Ok((Cohort::new(records, names, "years")?, RiskTable::from_scores(truth)))
}

/// Sidecar with columns `id,true_linear_predictor`.
pub fn write_truth<W: Write>(truth: &RiskTable, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["id", "true_linear_predictor"])?;
    for e in &truth.entries {
        w.write_record([e.id.clone(), e.risk.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{c_index, SurvivalOutcomes};

    fn event_fraction(c: &Cohort) -> f64 {
        c.n_events() as f64 / c.len() as f64
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig::normal(50, vec![1.0, -0.5], 0.1, 0.1, 9);
        let (a, ta) = generate_ph_cohort(&cfg).unwrap();
        let (b, tb) = generate_ph_cohort(&cfg).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(ta, tb);
        assert_eq!(a.records()[0].id, "s01");
    }

    #[test]
    fn equal_rates_give_half_events() {
        let cfg = SynthConfig::normal(10_000, vec![0.0], 0.2, 0.2, 1);
        let (c, _) = generate_ph_cohort(&cfg).unwrap();
        assert!((event_fraction(&c) - 0.5).abs() < 0.03);
    }

    #[test]
    fn heavy_censoring_hides_events() {
        let cfg = SynthConfig::normal(2_000, vec![0.5], 1e-3, 1e3, 2);
        let (c, _) = generate_ph_cohort(&cfg).unwrap();
        assert!(event_fraction(&c) < 0.01);
    }

    #[test]
    fn null_truth_is_constant() {
        let cfg = SynthConfig::normal(200, vec![0.0, 0.0], 1.0, 1.0, 3);
        let (c, truth) = generate_ph_cohort(&cfg).unwrap();
        assert!(truth.risks().iter().all(|r| *r == 0.0));
        let ci = c_index(&truth, &SurvivalOutcomes::from_cohort(&c)).unwrap();
        assert_eq!(ci, 0.5);
    }

    #[test]
    fn truth_beats_permutation() {
        let cfg = SynthConfig::normal(1_000, vec![1.0, -0.5], 0.1, 0.1, 4);
        let (c, truth) = generate_ph_cohort(&cfg).unwrap();
        let out = SurvivalOutcomes::from_cohort(&c);
        let mut risks = truth.risks();
        risks.rotate_left(137);
        let permuted = RiskTable::from_scores(truth.entries.iter().map(|e| e.id.clone()).zip(risks));
        assert!(c_index(&truth, &out).unwrap() > c_index(&permuted, &out).unwrap());
    }

    #[test]
    fn bernoulli_features_are_binary() {
        let cfg = SynthConfig {
            n: 100,
            beta: vec![0.7],
            baseline_rate: 1.0,
            censor_rate: 1.0,
            features: vec![FeatureDistribution::Bernoulli { q: 0.3 }],
            seed: 5,
        };
        let (c, _) = generate_ph_cohort(&cfg).unwrap();
        assert!(c
            .records()
            .iter()
            .all(|r| matches!(r.feature("x1"), Some(FeatureValue::Number(v)) if *v == 0.0 || *v == 1.0)));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SynthConfig::normal(1, vec![1.0], 1.0, 1.0, 0).validate().is_err());
        assert!(SynthConfig::normal(10, vec![1.0], 0.0, 1.0, 0).validate().is_err());
        let mut cfg = SynthConfig::normal(10, vec![1.0], 1.0, 1.0, 0);
        cfg.features.push(FeatureDistribution::Normal);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn truth_sidecar_header() {
        let mut buf = Vec::new();
        write_truth(&RiskTable::from_scores([("s1", 0.25)]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,true_linear_predictor\ns1,0.25\n");
    }
}
