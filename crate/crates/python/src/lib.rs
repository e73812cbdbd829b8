//! Python bindings: cohorts, pair construction, the feature ranker, anchor
//! scoring, the Cox baseline and the evaluation metrics.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use pairsurv::baseline_cox::{self, CoxModel as CoreCox};
use pairsurv::cohort::{self, Cohort as CoreCohort, SchemaConfig};
use pairsurv::comparator::{self, RankerModel, TrainConfig};
use pairsurv::featurize::Featurization;
use pairsurv::inference::{AnchorStrategy, RiskTable};
use pairsurv::metrics::{self, SurvivalOutcomes};
use pairsurv::pairs::{self, PairSet, SamplingConfig};
use pairsurv::pipeline::{self, PipelineConfig};
use pairsurv::synth::{self, SynthConfig};
use pairsurv::textualize::OrderPolicy;

create_exception!(pairsurv_py, PairsurvError, PyException);

fn err(e: pairsurv::Error) -> PyErr {
    PairsurvError::new_err(format!("{}: {e}", e.kind()))
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for pairsurv::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn risk_map(table: &RiskTable) -> HashMap<String, f64> {
    table.entries.iter().map(|e| (e.id.clone(), e.risk)).collect()
}

fn risk_table(risks: &HashMap<String, f64>) -> RiskTable {
    let mut pairs: Vec<(&String, &f64)> = risks.iter().collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    RiskTable::from_scores(pairs.into_iter().map(|(id, r)| (id.clone(), *r)))
}

fn pair_list(p: &PairSet) -> Vec<(String, String)> {
    p.iter().map(|x| (x.earlier.clone(), x.later.clone())).collect()
}

/// A validated survival cohort.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Cohort {
    inner: CoreCohort,
}

#[pymethods]
impl Cohort {
    /// Load a delimited file. `schema` is a JSON string naming the id, time,
    /// event and feature columns.
    #[staticmethod]
    #[pyo3(signature = (path, schema=None, delimiter=','))]
    fn from_csv(path: &str, schema: Option<&str>, delimiter: char) -> PyResult<Self> {
        let schema = match schema {
            Some(s) => SchemaConfig::from_json(s).py()?,
            None => SchemaConfig::default(),
        };
        let file = File::open(path).map_err(|e| err(e.into()))?;
        let inner = cohort::parse_cohort(BufReader::new(file), &schema, delimiter as u8).py()?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Cohort(n={}, events={})", self.inner.len(), self.inner.n_events())
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.records().iter().map(|r| r.time).collect()
    }

    #[getter]
    fn events(&self) -> Vec<bool> {
        self.inner.records().iter().map(|r| r.event).collect()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.schema().to_vec()
    }

    #[getter]
    fn n_events(&self) -> usize {
        self.inner.n_events()
    }

    /// Seeded random train/test split; the test size is the rounded fraction.
    #[pyo3(signature = (test_fraction=0.2, seed=0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Cohort, Cohort)> {
        let (train, test) = cohort::split_cohort(&self.inner, test_fraction, seed).py()?;
        Ok((Cohort { inner: train }, Cohort { inner: test }))
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| err(e.into()))?;
        cohort::write_cohort(&self.inner, &SchemaConfig::default(), file).py()
    }
}

/// Synthetic proportional-hazards cohort with standard normal features.
/// Returns the cohort and the true linear predictor per subject.
#[pyfunction]
#[pyo3(signature = (n, beta, baseline_rate=0.1, censor_rate=0.15, seed=0))]
fn synth_cohort(
    n: usize,
    beta: Vec<f64>,
    baseline_rate: f64,
    censor_rate: f64,
    seed: u64,
) -> PyResult<(Cohort, HashMap<String, f64>)> {
    let (inner, truth) =
        synth::generate_ph_cohort(&SynthConfig::normal(n, beta, baseline_rate, censor_rate, seed)).py()?;
    Ok((Cohort { inner }, risk_map(&truth)))
}

/// Every comparable `(earlier_id, later_id)` pair.
#[pyfunction]
fn comparable_pairs(cohort: &Cohort) -> Vec<(String, String)> {
    pair_list(&pairs::comparable_pairs(&cohort.inner))
}

/// Nested case-control pairs with `n_controls` controls per event.
#[pyfunction]
#[pyo3(signature = (cohort, n_controls=10, seed=0))]
fn sample_case_controls(cohort: &Cohort, n_controls: usize, seed: u64) -> PyResult<Vec<(String, String)>> {
    let config = SamplingConfig::new(n_controls, seed).py()?;
    Ok(pair_list(&pairs::sample_case_controls(&cohort.inner, &config).py()?))
}

/// Linear pairwise ranker over tabular features.
#[pyclass(frozen)]
struct Ranker {
    inner: RankerModel,
}

#[pymethods]
impl Ranker {
    /// Fit on case-control pairs drawn from `cohort`; `n_controls=None`
    /// uses every comparable pair.
    #[staticmethod]
    #[pyo3(signature = (cohort, n_controls=Some(10), epochs=20, learning_rate=0.5, batch_size=64, seed=0))]
    fn train(
        cohort: &Cohort,
        n_controls: Option<usize>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = PipelineConfig {
            n_controls,
            train: TrainConfig { epochs, learning_rate, batch_size, seed: 0 },
            seed,
            ..Default::default()
        };
        Ok(Self { inner: pipeline::fit_ranker(&cohort.inner, &config).py()? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RankerModel::from_json(text).py()? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    /// Probability that `first_id` has the event before `second_id`.
    fn probability(&self, cohort: &Cohort, first_id: &str, second_id: &str) -> PyResult<f64> {
        let lookup = |id: &str| {
            cohort.inner.get(id).ok_or_else(|| PairsurvError::new_err(format!("unknown id {id}")))
        };
        comparator::compare(&self.inner, lookup(first_id)?, lookup(second_id)?)
            .map(|s| s.p_first_earlier())
            .py()
    }

    /// Anchor-based risk for every test subject, as `{id: risk}`.
    #[pyo3(signature = (train, test, k=50, anchors="random", order_policy="shuffle", seed=0))]
    fn score(
        &self,
        train: &Cohort,
        test: &Cohort,
        k: usize,
        anchors: &str,
        order_policy: &str,
        seed: u64,
    ) -> PyResult<HashMap<String, f64>> {
        let config = scoring_config(k, anchors, order_policy, seed)?;
        let set = pipeline::anchors(&train.inner, &config).py()?;
        Ok(risk_map(&pipeline::score_test(&test.inner, &set, &self.inner, &config).py()?))
    }

    /// Test risks plus risks for the non-anchor training subjects, which
    /// define the median threshold for `hazard_ratio`.
    #[pyo3(signature = (train, test, k=50, anchors="random", order_policy="shuffle", seed=0))]
    #[allow(clippy::type_complexity)]
    fn score_split(
        &self,
        train: &Cohort,
        test: &Cohort,
        k: usize,
        anchors: &str,
        order_policy: &str,
        seed: u64,
    ) -> PyResult<(HashMap<String, f64>, HashMap<String, f64>)> {
        let config = scoring_config(k, anchors, order_policy, seed)?;
        let scores = pipeline::score_split(&train.inner, &test.inner, &self.inner, &config).py()?;
        Ok((risk_map(&scores.test), risk_map(&scores.train)))
    }
}

fn scoring_config(k: usize, anchors: &str, order_policy: &str, seed: u64) -> PyResult<PipelineConfig> {
    Ok(PipelineConfig {
        k,
        anchor_strategy: anchors.parse::<AnchorStrategy>().py()?,
        order_policy: order_policy.parse::<OrderPolicy>().py()?,
        seed,
        ..Default::default()
    })
}

/// Cox proportional-hazards baseline.
#[pyclass(frozen)]
struct CoxModel {
    inner: CoreCox,
}

#[pymethods]
impl CoxModel {
    #[staticmethod]
    #[pyo3(signature = (cohort, standardize=true))]
    fn fit(cohort: &Cohort, standardize: bool) -> PyResult<Self> {
        let featurization = Featurization::fit(&cohort.inner, standardize);
        let inner = baseline_cox::fit_cox(
            &cohort.inner,
            featurization,
            baseline_cox::DEFAULT_TOLERANCE,
            baseline_cox::DEFAULT_MAX_ITER,
        )
        .py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    /// Linear predictor for every subject, as `{id: risk}`.
    fn risks(&self, cohort: &Cohort) -> PyResult<HashMap<String, f64>> {
        Ok(risk_map(&self.inner.risk_table(&cohort.inner).py()?))
    }
}

#[pyfunction]
fn c_index(risks: HashMap<String, f64>, cohort: &Cohort) -> PyResult<f64> {
    metrics::c_index(&risk_table(&risks), &SurvivalOutcomes::from_cohort(&cohort.inner)).py()
}

#[pyfunction]
fn horizon_auc(risks: HashMap<String, f64>, cohort: &Cohort, horizon: f64) -> PyResult<f64> {
    metrics::horizon_auc(&risk_table(&risks), &SurvivalOutcomes::from_cohort(&cohort.inner), horizon).py()
}

/// Percentile bootstrap of the C-index: `(point, lower, upper)`.
#[pyfunction]
#[pyo3(signature = (risks, cohort, resamples=1000, seed=0))]
fn c_index_ci(risks: HashMap<String, f64>, cohort: &Cohort, resamples: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let outcomes = SurvivalOutcomes::from_cohort(&cohort.inner);
    let ci = metrics::bootstrap_ci(metrics::c_index_sample, &risk_table(&risks), &outcomes, resamples, seed).py()?;
    Ok((ci.point, ci.lower, ci.upper))
}

/// Kaplan-Meier curve as `(time, survival, at_risk, events)` rows.
#[pyfunction]
fn km_curve(cohort: &Cohort) -> PyResult<Vec<(f64, f64, usize, usize)>> {
    let curve = metrics::km_curve(&SurvivalOutcomes::from_cohort(&cohort.inner)).py()?;
    Ok(curve.points.iter().map(|p| (p.time, p.survival, p.at_risk, p.events)).collect())
}

/// Median split of test risks by the training median, then the hazard ratio
/// of high against low: `(hr, lower, upper, p_value)`.
#[pyfunction]
fn hazard_ratio(
    train_risks: HashMap<String, f64>,
    test_risks: HashMap<String, f64>,
    test: &Cohort,
) -> PyResult<(f64, f64, f64, f64)> {
    let strata = metrics::stratify_by_median(&risk_table(&train_risks), &risk_table(&test_risks)).py()?;
    let hr = baseline_cox::hazard_ratio(&strata, &SurvivalOutcomes::from_cohort(&test.inner)).py()?;
    Ok((hr.hr, hr.ci_lower, hr.ci_upper, hr.p_value))
}

#[pymodule]
fn pairsurv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PairsurvError", m.py().get_type::<PairsurvError>())?;
    m.add_class::<Cohort>()?;
    m.add_class::<Ranker>()?;
    m.add_class::<CoxModel>()?;
    m.add_function(wrap_pyfunction!(synth_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(comparable_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(sample_case_controls, m)?)?;
    m.add_function(wrap_pyfunction!(c_index, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_auc, m)?)?;
    m.add_function(wrap_pyfunction!(c_index_ci, m)?)?;
    m.add_function(wrap_pyfunction!(km_curve, m)?)?;
    m.add_function(wrap_pyfunction!(hazard_ratio, m)?)?;
    Ok(())
}
