//! Accuracy and ROC-AUC.

use crate::error::{Error, Result};

/// Fraction of predictions equal to the labels.
pub fn accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy of scalar logits thresholded at 0.
pub fn accuracy_from_logits(logits: &[f64], labels: &[bool]) -> Result<f64> {
    let preds: Vec<bool> = logits.iter().map(|&l| l > 0.0).collect();
    accuracy(&preds, labels)
}

/// Area under the ROC curve via mid-ranks (Mann–Whitney U).
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps mid-ranks integral
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j) as u128;
        rank2_pos += mid2 * order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}
