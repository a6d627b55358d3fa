//! Brute-force reference implementations used to cross-check the fast paths.
//!
//! Everything here favors obviousness over speed and shares no code with the
//! production implementations in `metrics` and `aggregate`. Tests compare the
//! two routes; a disagreement means one of them is wrong.

/// AUC by the definition: over every (positive, negative) pair, count 1 for
/// a correctly ordered pair, 0.5 for a tie, 0 otherwise, and average.
/// Quadratic in the input size.
pub fn pairwise_auc(pairs: &[(f64, u8)]) -> f64 {
    let mut total = 0usize;
    let mut sum = 0.0;
    for &(sp, lp) in pairs {
        if lp != 1 {
            continue;
        }
        for &(sn, ln) in pairs {
            if ln != 0 {
                continue;
            }
            total += 1;
            sum += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    sum / total as f64
}

/// Average precision by enumerating every distinct score as a threshold and
/// accumulating the step-wise sum (R_k - R_{k-1}) * P_k, recounting
/// predictions from scratch at each threshold.
pub fn threshold_ap(pairs: &[(f64, u8)]) -> f64 {
    let mut thresholds: Vec<f64> = pairs.iter().map(|&(s, _)| s).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let n_pos = pairs.iter().filter(|&&(_, l)| l == 1).count();
    let mut ap = 0.0;
    let mut recall_prev = 0.0;
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut predicted = 0usize;
        for &(s, l) in pairs {
            if s >= t {
                predicted += 1;
                if l == 1 {
                    tp += 1;
                }
            }
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
    }
    ap
}

/// Re-derive the Eq. 1 estimate from raw parse outcomes with a plain loop.
/// `parses` holds `Some(0)`, `Some(1)`, or `None` for an unparseable answer.
/// Returns (estimate, n_total, n_valid, degraded).
pub fn recount_estimate(parses: &[Option<u8>]) -> (f64, usize, usize, bool) {
    let n_total = parses.len();
    let mut n_valid = 0usize;
    let mut ones = 0usize;
    for p in parses {
        match p {
            Some(1) => {
                n_valid += 1;
                ones += 1;
            }
            Some(_) => n_valid += 1,
            None => {}
        }
    }
    let estimate = if n_valid == 0 {
        0.5
    } else {
        ones as f64 / n_valid as f64
    };
    (estimate, n_total, n_valid, n_valid < n_total)
}
