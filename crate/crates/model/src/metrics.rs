//! Classification metrics: accuracy and macro one-vs-rest AUC.

use crate::error::{ModelError, Result};

/// Fraction of samples whose highest score matches the label. Ties go to the
/// lowest-index class.
pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(ModelError::Metric(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(ModelError::Metric("no samples".into()));
    }
    let mut correct = 0usize;
    for (row, &label) in scores.iter().zip(labels) {
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// One-vs-rest AUC for a single class via the rank-sum identity, with
/// average ranks over tied scores. Returns None when the class is absent or
/// universal (no negative examples).
fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; everything in i..=j shares the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro-averaged one-vs-rest AUC over `num_classes` classes. Classes with
/// no positive (or no negative) examples are skipped; their indices are
/// returned so callers can warn about them.
pub fn auc_macro_ovr(
    scores: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<(f64, Vec<usize>)> {
    if scores.len() != labels.len() {
        return Err(ModelError::Metric(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(ModelError::Metric("no samples".into()));
    }
    for row in scores {
        if row.len() != num_classes {
            return Err(ModelError::Metric(format!(
                "score row has {} entries for {num_classes} classes",
                row.len()
            )));
        }
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for c in 0..num_classes {
        let class_scores: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match binary_auc(&class_scores, &positive) {
            Some(auc) => {
                total += auc;
                used += 1;
            }
            None => skipped.push(c),
        }
    }
    if used == 0 {
        return Err(ModelError::Metric("every class was absent or universal".into()));
    }
    Ok((total / used as f64, skipped))
}
