use crate::error::{Error, Result};
use crate::inference::RiskTable;

use super::{align, Sample, SurvivalOutcomes};

/// Harrell's concordance index.
///
/// Over pairs where `i` has an event and `t_i < t_j`, a pair scores 1 when
/// `risk_i > risk_j`, 0.5 on a risk tie, 0 otherwise.
pub fn c_index(risks: &RiskTable, outcomes: &SurvivalOutcomes) -> Result<f64> {
    c_index_sample(&align(risks, outcomes)?)
}

/// Binary indexed tree over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn below(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// C-index in O(n log n): walk subjects from latest to earliest time,
/// querying each event against everyone with a strictly later time.
pub fn c_index_sample(s: &Sample) -> Result<f64> {
    let n = s.len();
    let mut levels: Vec<f64> = s.risk.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let rank: Vec<usize> = s
        .risk
        .iter()
        .map(|r| levels.partition_point(|l| l < r))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.time[b].total_cmp(&s.time[a]));

    let mut tree = Fenwick(vec![0; levels.len() + 1]);
    let mut inserted: u64 = 0;
    let (mut concordant, mut ties, mut pairs) = (0u64, 0u64, 0u64);
    let mut g = 0;
    while g < n {
        let t = s.time[order[g]];
        let end = g + order[g..].iter().take_while(|&&k| s.time[k] == t).count();
        for &i in order[g..end].iter().filter(|&&i| s.event[i]) {
            let below = tree.below(rank[i]);
            let equal = tree.below(rank[i] + 1) - below;
            concordant += below;
            ties += equal;
            pairs += inserted;
        }
        for &i in &order[g..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        g = end;
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("c-index: no comparable pairs".into()));
    }
    Ok((concordant as f64 + 0.5 * ties as f64) / pairs as f64)
}
