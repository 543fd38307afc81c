use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann-Whitney statistic.
///
/// Ties between a positive and a negative count one half. Computed from
/// average ranks in `O(n log n)`.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auc_roc", (scores.len(), 1), (labels.len(), 1)));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Contract(format!("auc_roc: score {i} is NaN")));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::DegenerateLabels("auc_roc labels must be 0 or 1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "auc_roc needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, kept integral: a tie group spanning
    // ranks lo..=hi (1-based) gives each member rank (lo + hi) / 2.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_rank = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_rank * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}
