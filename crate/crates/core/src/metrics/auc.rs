use crate::error::{Error, Result};
use crate::inference::RiskTable;

use super::{align, Sample, SurvivalOutcomes};

/// Role of a subject in the horizon classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonClass {
    /// Event at or before the horizon.
    Positive,
    /// Still under follow-up at the horizon with no prior event.
    Negative,
    /// Censored before the horizon.
    Excluded,
}

impl HorizonClass {
    pub fn of(time: f64, event: bool, horizon: f64) -> Self {
        if event && time <= horizon {
            HorizonClass::Positive
        } else if time >= horizon {
            HorizonClass::Negative
        } else {
            HorizonClass::Excluded
        }
    }
}

pub fn horizon_auc(risks: &RiskTable, outcomes: &SurvivalOutcomes, horizon: f64) -> Result<f64> {
    horizon_auc_sample(&align(risks, outcomes)?, horizon)
}

/// Mann-Whitney AUC of "event by `horizon`" with half credit for ties.
pub fn horizon_auc_sample(s: &Sample, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
    }
    // (score, is_positive) over the non-excluded subjects
    let mut scored: Vec<(f64, bool)> = (0..s.len())
        .filter_map(|i| match HorizonClass::of(s.time[i], s.event[i], horizon) {
            HorizonClass::Positive => Some((s.risk[i], true)),
            HorizonClass::Negative => Some((s.risk[i], false)),
            HorizonClass::Excluded => None,
        })
        .collect();
    let n_pos = scored.iter().filter(|x| x.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC at horizon {horizon}: {n_pos} positives, {n_neg} negatives"
        )));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midranks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let j = i + scored[i..].iter().take_while(|x| x.0 == scored[i].0).count();
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += midrank * scored[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: &[(f64, bool, f64)]) -> Sample {
        Sample {
            time: rows.iter().map(|r| r.0).collect(),
            event: rows.iter().map(|r| r.1).collect(),
            risk: rows.iter().map(|r| r.2).collect(),
        }
    }

    #[test]
    fn horizon_five_example() {
        let rows = [(2.0, true, 0.8), (3.0, false, 0.6), (6.0, true, 0.4), (7.0, false, 0.2)];
        assert_eq!(horizon_auc_sample(&sample(&rows), 5.0).unwrap(), 1.0);
        let mut swapped = rows;
        swapped[0].2 = 0.1;
        assert_eq!(horizon_auc_sample(&sample(&swapped), 5.0).unwrap(), 0.0);
    }

    #[test]
    fn ties_give_half() {
        let rows = [(2.0, true, 0.5), (6.0, true, 0.5), (7.0, false, 0.5), (1.0, true, 0.5)];
        assert_eq!(horizon_auc_sample(&sample(&rows), 5.0).unwrap(), 0.5);
    }

    #[test]
    fn one_sided_is_undefined() {
        let rows = [(2.0, true, 0.5), (3.0, true, 0.4)];
        assert!(matches!(horizon_auc_sample(&sample(&rows), 5.0), Err(Error::UndefinedMetric(m)) if m.contains('5')));
    }

    #[test]
    fn classes_partition() {
        assert_eq!(HorizonClass::of(5.0, true, 5.0), HorizonClass::Positive);
        assert_eq!(HorizonClass::of(5.0, false, 5.0), HorizonClass::Negative);
        assert_eq!(HorizonClass::of(4.0, false, 5.0), HorizonClass::Excluded);
        assert_eq!(HorizonClass::of(9.0, true, 5.0), HorizonClass::Negative);
    }
}
