use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SurvivalOutcomes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmPoint {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

/// Product-limit survival estimate as a right-continuous step function.
/// The first point is `(0, 1)`; the rest sit at distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub points: Vec<KmPoint>,
}

impl KmCurve {
    /// `S(t)`: survival at the last step at or before `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.points.partition_point(|p| p.time <= t);
        if k == 0 { 1.0 } else { self.points[k - 1].survival }
    }

    pub fn write_csv<W: Write>(&self, group: &str, w: &mut csv::Writer<W>) -> Result<()> {
        for p in &self.points {
            w.write_record([
                group.to_string(),
                p.time.to_string(),
                p.survival.to_string(),
                p.at_risk.to_string(),
                p.events.to_string(),
            ])?;
        }
        Ok(())
    }
}

pub fn km_curve(outcomes: &SurvivalOutcomes) -> Result<KmCurve> {
    km_curve_from(&outcomes.times(), &outcomes.events())
}

pub fn km_curve_from(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    if times.is_empty() || times.len() != events.len() {
        return Err(Error::Argument("Kaplan-Meier needs matching, non-empty times and events".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut points = vec![KmPoint { time: 0.0, survival: 1.0, at_risk: times.len(), events: 0 }];
    let mut at_risk = times.len();
    let mut survival = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let group = order[i..].iter().take_while(|&&k| times[k] == t).count();
        let deaths = order[i..i + group].iter().filter(|&&k| events[k]).count();
        if deaths > 0 {
            survival *= 1.0 - deaths as f64 / at_risk as f64;
            points.push(KmPoint { time: t, survival, at_risk, events: deaths });
        }
        at_risk -= group;
        i += group;
    }
    Ok(KmCurve { points })
}
