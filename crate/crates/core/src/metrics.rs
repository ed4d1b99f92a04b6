//! Classification and ranking metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetgraph::ObjectId;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("class index {0} outside {1} classes")]
    BadClass(usize, usize),
    #[error("ranked list of length {len} is shorter than K = {k}")]
    ShortList { len: usize, k: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("malformed ranked list: {0}")]
    Malformed(String),
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    check_pairs(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class F1 over classes `0..n_classes`. A class
/// that never occurs in predictions or labels scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64, MetricError> {
    check_pairs(predictions, labels)?;
    if n_classes == 0 {
        return Err(MetricError::Empty);
    }
    if let Some(&c) = predictions.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(MetricError::BadClass(c, n_classes));
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = predictions.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count();
        let pred = predictions.iter().filter(|&&p| p == c).count();
        let actual = labels.iter().filter(|&&l| l == c).count();
        if pred + actual > 0 {
            total += 2.0 * tp as f64 / (pred + actual) as f64;
        }
    }
    Ok(total / n_classes as f64)
}

fn check_pairs(predictions: &[usize], labels: &[usize]) -> Result<(), MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Candidates for one (query object, relation), best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: ObjectId,
    pub relation: usize,
    pub candidates: Vec<ObjectId>,
    /// Candidate holds this relation with the query object.
    pub relevant: Vec<bool>,
    /// Candidate holds any novel relation with the query object.
    pub close: Vec<bool>,
}

impl RankedList {
    pub fn validate(&self) -> Result<(), MetricError> {
        let n = self.candidates.len();
        if self.relevant.len() != n || self.close.len() != n {
            return Err(MetricError::Malformed("flag lengths differ from the candidate count".into()));
        }
        let mut seen = self.candidates.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(MetricError::Malformed("duplicate candidate".into()));
        }
        Ok(())
    }
}

/// Binary-relevance NDCG with `log2(rank + 1)` discounts.
pub fn ndcg_at_k(rl: &RankedList, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    rl.validate()?;
    let dcg: f64 = rl
        .relevant
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let total = rl.relevant.iter().filter(|&&r| r).count();
    let ideal: f64 = (0..total.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(if ideal == 0.0 { 0.0 } else { dcg / ideal })
}

/// Mean of precision@i over relevant positions `i <= k`, divided by
/// `min(k, #relevant)`.
pub fn map_at_k(rl: &RankedList, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    rl.validate()?;
    let total = rl.relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(0.0);
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &r) in rl.relevant.iter().take(k).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total.min(k) as f64)
}

/// How close objects are counted across the lists of one query object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloseCounting {
    /// Every appearance in any list counts.
    #[default]
    PerOccurrence,
    /// Each close object counts once, however many lists show it.
    Distinct,
}

/// Close objects among the top `k` of all lists over `k * lists.len()`.
pub fn prc_at_k(lists: &[RankedList], k: usize, counting: CloseCounting) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if lists.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut close = Vec::new();
    for rl in lists {
        rl.validate()?;
        if rl.candidates.len() < k {
            return Err(MetricError::ShortList {
                len: rl.candidates.len(),
                k,
            });
        }
        close.extend((0..k).filter(|&i| rl.close[i]).map(|i| rl.candidates[i]));
    }
    if counting == CloseCounting::Distinct {
        close.sort_unstable();
        close.dedup();
    }
    Ok(close.len() as f64 / (k * lists.len()) as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Metric columns of the summary table, in order.
pub const REPORT_COLUMNS: [&str; 8] = ["Acc", "F1", "NDCG@10", "NDCG@20", "MAP@10", "MAP@20", "PRC@10", "PRC@20"];

/// One run's metrics in [`REPORT_COLUMNS`] order. Ranking metrics are
/// `None` when no ranking lists were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub ndcg10: Option<f64>,
    pub ndcg20: Option<f64>,
    pub map10: Option<f64>,
    pub map20: Option<f64>,
    pub prc10: Option<f64>,
    pub prc20: Option<f64>,
}

impl MetricRow {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.accuracy),
            Some(self.macro_f1),
            self.ndcg10,
            self.ndcg20,
            self.map10,
            self.map20,
            self.prc10,
            self.prc20,
        ]
    }
}

/// Mean ranking metrics over query objects. `groups` holds the `N_rel`
/// lists of each query object.
pub fn ranking_summary(
    groups: &[Vec<RankedList>],
    counting: CloseCounting,
) -> Result<[Option<f64>; 6], MetricError> {
    if groups.is_empty() {
        return Ok([None; 6]);
    }
    let mut sums = [0.0; 6];
    let mut lists = 0usize;
    for g in groups {
        for rl in g {
            sums[0] += ndcg_at_k(rl, 10)?;
            sums[1] += ndcg_at_k(rl, 20)?;
            sums[2] += map_at_k(rl, 10)?;
            sums[3] += map_at_k(rl, 20)?;
            lists += 1;
        }
        sums[4] += prc_at_k(g, 10, counting)?;
        sums[5] += prc_at_k(g, 20, counting)?;
    }
    let mut out = [None; 6];
    for i in 0..4 {
        out[i] = Some(sums[i] / lists as f64);
    }
    out[4] = Some(sums[4] / groups.len() as f64);
    out[5] = Some(sums[5] / groups.len() as f64);
    Ok(out)
}
