//! Ranking metrics over per-sample scores, and the power-law fit for N-sweeps.
//!
//! AUC is computed as the Mann-Whitney rank statistic with average ranks for
//! ties; AP as the non-interpolated threshold-group sum. Both are exact, which
//! matters here: test-time-scaling estimates are multiples of 1/N, so tied
//! scores are the norm, not the edge case. Each has an independent brute-force
//! counterpart in [`crate::oracles`] that tests compare against.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("scored set needs at least one sample of each class")]
    SingleClass,
    #[error("label {0} outside {{0,1}}")]
    InvalidLabel(u8),
    #[error("score {0} outside [0,1]")]
    InvalidScore(f64),
    #[error("power-law fit needs at least 2 distinct n values")]
    TooFewPoints,
    #[error("power-law fit needs n ≥ 1 and metric < 1, got (n={n}, metric={metric})")]
    DegeneratePoint { n: usize, metric: f64 },
}

/// Scores paired with ground-truth labels, validated to contain both classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pairs: Vec<(f64, u8)>,
}

impl ScoredSet {
    pub fn new(pairs: Vec<(f64, u8)>) -> Result<ScoredSet, MetricsError> {
        let mut seen = [false; 2];
        for &(score, label) in &pairs {
            if label > 1 {
                return Err(MetricsError::InvalidLabel(label));
            }
            if !(0.0..=1.0).contains(&score) || score.is_nan() {
                return Err(MetricsError::InvalidScore(score));
            }
            seen[label as usize] = true;
        }
        if !(seen[0] && seen[1]) {
            return Err(MetricsError::SingleClass);
        }
        Ok(ScoredSet { pairs })
    }

    pub fn pairs(&self) -> &[(f64, u8)] {
        &self.pairs
    }
}

/// Parameters of err(n) = alpha * n^(-beta) fitted to 1 - metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub beta: f64,
    /// Residual RMSE in log space; 0 means the points lie exactly on the fit.
    pub rmse: f64,
}

/// Area under the ROC curve via the Mann-Whitney U statistic.
///
/// Equivalent to: over all (positive, negative) pairs, the mean of 1 if the
/// positive scores higher, 0.5 on a tie, 0 otherwise. Average ranks make tie
/// handling exact. O(n log n).
pub fn auc(s: &ScoredSet) -> f64 {
    let pairs = s.pairs();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.partial_cmp(&pairs[b].0).unwrap());

    // rank[i] is the 1-based average rank of pairs[i].0 ascending.
    let mut rank = vec![0.0f64; pairs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            rank[idx] = avg;
        }
        i = j + 1;
    }

    let n_pos = pairs.iter().filter(|&&(_, l)| l == 1).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    let rank_sum_pos: f64 = pairs
        .iter()
        .zip(&rank)
        .filter(|((_, l), _)| *l == 1)
        .map(|(_, r)| r)
        .sum();
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    u / (n_pos * n_neg)
}

/// Average precision as the non-interpolated sum over threshold groups:
/// tied scores form one group, and AP = sum over groups of
/// (recall_k - recall_{k-1}) * precision_k after including the group.
pub fn average_precision(s: &ScoredSet) -> f64 {
    let mut pairs = s.pairs().to_vec();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let n_pos = pairs.iter().filter(|&&(_, l)| l == 1).count() as f64;
    let mut ap = 0.0;
    let mut recall_prev = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        for &(_, label) in &pairs[i..=j] {
            seen += 1;
            tp += label as usize;
        }
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / n_pos;
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j + 1;
    }
    ap
}

/// Fit err(n) = alpha * n^(-beta) to the error term 1 - metric by least
/// squares of log(1 - metric) against log(n). Requires at least two distinct
/// n values and every metric strictly below 1 so logs stay finite.
pub fn fit_power_law(points: &[(usize, f64)]) -> Result<PowerLawFit, MetricsError> {
    for &(n, metric) in points {
        if n == 0 || metric >= 1.0 || metric.is_nan() {
            return Err(MetricsError::DegeneratePoint { n, metric });
        }
    }
    let mut distinct: Vec<usize> = points.iter().map(|&(n, _)| n).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MetricsError::TooFewPoints);
    }

    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, m)| (1.0 - m).ln()).collect();
    let k = points.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let mse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum::<f64>()
        / k;

    Ok(PowerLawFit {
        alpha: intercept.exp(),
        beta: -slope,
        rmse: mse.sqrt(),
    })
}
