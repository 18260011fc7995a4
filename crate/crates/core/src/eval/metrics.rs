use crate::error::{Error, Result};
use crate::numerics::BCE_CLAMP;

/// Area under the ROC curve from average ranks (Mann-Whitney U).
///
/// Tied scores share their mean rank, which counts a tied positive/negative
/// pair as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "auroc",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("auroc scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of doubled ranks of the positives keeps tie averages integral.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j average to (i+1+j)/2.
        let doubled = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += doubled * tied_pos;
        i = j;
    }
    let p = positives as u128;
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Mean binary cross-entropy of predictions against binary or soft targets.
pub fn mean_bce(pred: &[f32], target: &[f32]) -> f64 {
    let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(lo, hi);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / pred.len().max(1) as f64
}
