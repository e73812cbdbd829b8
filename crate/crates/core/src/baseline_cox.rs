//! Cox proportional-hazards baseline.
//!
//! Newton's method on the Breslow partial log-likelihood with step-halving,
//! plus the univariate hazard ratio used for risk-group comparisons.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{Cohort, CohortRecord};
use crate::error::{Error, Result};
use crate::featurize::Featurization;
use crate::inference::RiskTable;
use crate::metrics::{RiskGroup, Stratification, SurvivalOutcomes};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Coefficient norm beyond which a still-moving fit is declared separated.
pub const SEPARATION_NORM: f64 = 50.0;
const MAX_HALVINGS: usize = 60;
/// A converged fit whose next Newton step still exceeds this fraction of
/// `max(1, |beta_j|)` sits on a monotone likelihood.
const INFINITE_STEP: f64 = 1e-4;
/// Relative rounding allowance when comparing log-likelihoods.
const LOGLIK_SLACK: f64 = 1e-12;
const Z_95: f64 = 1.959_963_984_540_054;

/// Design matrix with right-censored outcomes, rows sorted by descending time.
#[derive(Debug, Clone)]
pub struct CoxProblem {
    x: Vec<Vec<f64>>,
    time: Vec<f64>,
    event: Vec<bool>,
    p: usize,
}

impl CoxProblem {
    pub fn new(x: Vec<Vec<f64>>, time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        let n = x.len();
        if n == 0 || time.len() != n || event.len() != n {
            return Err(Error::Argument("design, times and events must be non-empty and equally long".into()));
        }
        let p = x[0].len();
        if p == 0 || x.iter().any(|r| r.len() != p) {
            return Err(Error::Argument("design rows must share a positive width".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
        Ok(Self {
            x: order.iter().map(|&i| x[i].clone()).collect(),
            time: order.iter().map(|&i| time[i]).collect(),
            event: order.iter().map(|&i| event[i]).collect(),
            p,
        })
    }

    pub fn dimension(&self) -> usize {
        self.p
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|e| **e).count()
    }

    /// Partial log-likelihood, gradient and Hessian at `beta`.
    ///
    /// Breslow ties: every event at time `t` shares the risk set
    /// `{j : t_j >= t}`.
    pub fn evaluate(&self, beta: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let p = self.p;
        let eta: Vec<f64> = self.x.iter().map(|r| dot(r, beta)).collect();
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut loglik = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        // running risk-set sums, exp(eta - shift) scaled
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![vec![0.0; p]; p];

        let n = self.x.len();
        let mut i = 0;
        while i < n {
            let t = self.time[i];
            let end = i + self.time[i..].iter().take_while(|&&u| u == t).count();
            for k in i..end {
                let w = (eta[k] - shift).exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * self.x[k][a];
                    for b in 0..=a {
                        s2[a][b] += w * self.x[k][a] * self.x[k][b];
                    }
                }
            }
            let d = (i..end).filter(|&k| self.event[k]).count();
            if d > 0 {
                let d = d as f64;
                for k in (i..end).filter(|&k| self.event[k]) {
                    loglik += eta[k];
                    for a in 0..p {
                        grad[a] += self.x[k][a];
                    }
                }
                loglik -= d * (s0.ln() + shift);
                for a in 0..p {
                    let ma = s1[a] / s0;
                    grad[a] -= d * ma;
                    for b in 0..=a {
                        hess[a][b] -= d * (s2[a][b] / s0 - ma * s1[b] / s0);
                    }
                }
            }
            i = end;
        }
        for a in 0..p {
            for b in 0..a {
                hess[b][a] = hess[a][b];
            }
        }
        (loglik, grad, hess)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn breslow_loglik(problem: &CoxProblem, beta: &[f64]) -> f64 {
    problem.evaluate(beta).0
}

pub fn breslow_gradient(problem: &CoxProblem, beta: &[f64]) -> Vec<f64> {
    problem.evaluate(beta).1
}

pub fn breslow_hessian(problem: &CoxProblem, beta: &[f64]) -> Vec<Vec<f64>> {
    problem.evaluate(beta).2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Log-likelihood at the start and after each accepted step.
    pub loglik_trace: Vec<f64>,
}

/// Unpenalized fit on a raw design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub coefficients: Vec<f64>,
    /// Observed information `-H` at the estimate.
    pub information: Vec<Vec<f64>>,
    pub convergence: Convergence,
}

impl CoxFit {
    /// Standard errors from the inverse information.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let p = self.coefficients.len();
        let info = DMatrix::from_fn(p, p, |a, b| self.information[a][b]);
        let inv = info
            .try_inverse()
            .ok_or_else(|| Error::Rank("information matrix is singular".into()))?;
        Ok((0..p).map(|a| inv[(a, a)].max(0.0).sqrt()).collect())
    }
}

pub fn fit_problem(problem: &CoxProblem, tolerance: f64, max_iter: usize) -> Result<CoxFit> {
    if problem.n_events() == 0 {
        return Err(Error::Argument("Cox fit needs at least one event".into()));
    }
    for a in 0..problem.p {
        let first = problem.x[0][a];
        if problem.x.iter().all(|r| r[a] == first) {
            return Err(Error::Rank(format!("design column {a} is constant")));
        }
    }
    let p = problem.p;
    let mut beta = vec![0.0; p];
    let (mut ll, mut grad, mut hess) = problem.evaluate(&beta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    loop {
        let gnorm = max_norm(&grad);
        if gnorm < tolerance {
            if let Some(step) = newton_step(&hess, &grad) {
                if let Some(j) = (0..p).find(|&j| step[j].abs() > INFINITE_STEP * beta[j].abs().max(1.0)) {
                    return Err(Error::Separation(format!(
                        "likelihood is monotone in coefficient {j} (beta = {:.3}, remaining step {:.3})",
                        beta[j], step[j]
                    )));
                }
            }
            return Ok(CoxFit {
                coefficients: beta,
                information: negate(&hess),
                convergence: Convergence { iterations, gradient_norm: gnorm, loglik_trace: trace },
            });
        }
        if dot(&beta, &beta).sqrt() > SEPARATION_NORM {
            return Err(Error::Separation(format!(
                "coefficients diverge (|beta| > {SEPARATION_NORM}) with gradient norm {gnorm:e}"
            )));
        }
        if iterations == max_iter {
            return Err(Error::NoConvergence { iterations, gradient_norm: gnorm });
        }
        iterations += 1;

        let step = newton_step(&hess, &grad).ok_or_else(|| Error::Rank("information matrix is singular".into()))?;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let eval = problem.evaluate(&candidate);
            // near the optimum the likelihood gain drops below rounding, so a
            // flat likelihood with a shrinking gradient also counts as ascent
            let flat = eval.0 >= ll - LOGLIK_SLACK * ll.abs().max(1.0);
            if eval.0 >= ll || (flat && max_norm(&eval.1) < gnorm) {
                accepted = Some((candidate, eval));
                break;
            }
            scale /= 2.0;
        }
        match accepted {
            Some((candidate, (l, g, h))) => {
                beta = candidate;
                (ll, grad, hess) = (l, g, h);
                trace.push(ll);
            }
            // no ascent direction left at machine precision
            None => return Err(Error::NoConvergence { iterations, gradient_norm: gnorm }),
        }
    }
}

/// Solve `(-H) step = g`; `None` when the information matrix is singular.
fn newton_step(hess: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let p = grad.len();
    let info = DMatrix::from_fn(p, p, |a, b| -hess[a][b]);
    let g = DVector::from_column_slice(grad);
    let step = match info.clone().cholesky() {
        Some(ch) => ch.solve(&g),
        None => info.lu().solve(&g)?,
    };
    step.iter().all(|s| s.is_finite()).then(|| step.iter().copied().collect())
}

fn negate(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|v| -v).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub coefficients: Vec<f64>,
    pub featurization: Featurization,
    pub convergence: Convergence,
    pub information: Vec<Vec<f64>>,
}

impl CoxModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CoxModel = serde_json::from_str(text)?;
        if model.coefficients.len() != model.featurization.dimension() {
            return Err(Error::Argument(format!(
                "model has {} coefficients for a {}-dimensional featurization",
                model.coefficients.len(),
                model.featurization.dimension()
            )));
        }
        Ok(model)
    }

    /// Linear predictors for every record.
    pub fn risk_table(&self, cohort: &Cohort) -> Result<RiskTable> {
        let scores = cohort
            .records()
            .iter()
            .map(|r| Ok((r.id.as_str(), cox_risk(self, r)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RiskTable::from_scores(scores))
    }
}

pub fn fit_cox(cohort: &Cohort, featurization: Featurization, tolerance: f64, max_iter: usize) -> Result<CoxModel> {
    let x = featurization.transform_all(cohort)?;
    let time = cohort.records().iter().map(|r| r.time).collect();
    let event = cohort.records().iter().map(|r| r.event).collect();
    let fit = fit_problem(&CoxProblem::new(x, time, event)?, tolerance, max_iter)?;
    Ok(CoxModel {
        coefficients: fit.coefficients,
        featurization,
        convergence: fit.convergence,
        information: fit.information,
    })
}

/// Linear predictor `beta . phi(x)`.
pub fn cox_risk(model: &CoxModel, record: &CohortRecord) -> Result<f64> {
    Ok(dot(&model.featurization.transform(record)?, &model.coefficients))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRatioResult {
    pub hr: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub beta: f64,
    pub se: f64,
}

/// Univariate Cox hazard ratio of an indicator, with Wald interval and test.
pub fn hazard_ratio_indicator(indicator: &[bool], time: &[f64], event: &[bool]) -> Result<HazardRatioResult> {
    if !indicator.iter().any(|g| *g) || indicator.iter().all(|g| *g) {
        return Err(Error::Rank("group indicator is constant".into()));
    }
    for side in [false, true] {
        let events = (0..indicator.len()).filter(|&i| indicator[i] == side && event[i]).count();
        if events == 0 {
            return Err(Error::Separation(format!(
                "the {} group has no events",
                if side { "indicated" } else { "reference" }
            )));
        }
    }
    let x = indicator.iter().map(|&g| vec![if g { 1.0 } else { 0.0 }]).collect();
    let fit = fit_problem(&CoxProblem::new(x, time.to_vec(), event.to_vec())?, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
    let beta = fit.coefficients[0];
    let se = fit.standard_errors()?[0];
    let z = beta / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(HazardRatioResult {
        hr: beta.exp(),
        ci_lower: (beta - Z_95 * se).exp(),
        ci_upper: (beta + Z_95 * se).exp(),
        p_value: (2.0 * normal.sf(z.abs())).min(1.0),
        beta,
        se,
    })
}

/// Hazard ratio of the high-risk group against the low-risk group.
pub fn hazard_ratio(groups: &Stratification, outcomes: &SurvivalOutcomes) -> Result<HazardRatioResult> {
    let mut indicator = Vec::with_capacity(groups.assignments.len());
    let mut time = Vec::with_capacity(groups.assignments.len());
    let mut event = Vec::with_capacity(groups.assignments.len());
    for (id, g) in &groups.assignments {
        let (t, e) = outcomes
            .get(id)
            .ok_or_else(|| Error::Argument(format!("no outcome for subject {id}")))?;
        indicator.push(*g == RiskGroup::High);
        time.push(t);
        event.push(e);
    }
    hazard_ratio_indicator(&indicator, &time, &event)
}
