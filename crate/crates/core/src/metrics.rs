//! Evaluation metrics against true class labels.

use crate::data::Label;
use crate::error::{DflError, Result};

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-12;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(DflError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(DflError::EmptyDataset("no predictions to evaluate"));
    }
    Ok(())
}

/// Mean log loss of probability predictions.
pub fn nll(probs: &[f64], labels: &[Label]) -> Result<f64> {
    same_len(probs.len(), labels.len())?;
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            match y {
                Label::Positive => -p.ln(),
                Label::Negative => -(1.0 - p).ln(),
            }
        })
        .sum();
    Ok(s / probs.len() as f64)
}

/// Accuracy at threshold 0.5; `p = 0.5` predicts positive.
pub fn acc(probs: &[f64], labels: &[Label]) -> Result<f64> {
    same_len(probs.len(), labels.len())?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| Label::from_bool(p >= 0.5) == y)
        .count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Average precision: `sum (R_k - R_{k-1}) * P_k` over a descending sweep of
/// the distinct scores, tied scores entering together.
pub fn auc_pr(scores: &[f64], labels: &[Label]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    let npos = labels.iter().filter(|y| y.is_positive()).count();
    if npos == 0 {
        return Err(DflError::UndefinedMetric("AUC-PR needs at least one positive label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let before = tp;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp > before {
            area += ((tp - before) as f64 / npos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(area)
}

/// `(nll_method - nll_oracle) / nll_oracle`.
pub fn rll(nll_method: f64, nll_oracle: f64) -> Result<f64> {
    if !(nll_oracle > 0.0) {
        return Err(DflError::UndefinedMetric("relative log loss needs a positive reference loss"));
    }
    Ok((nll_method - nll_oracle) / nll_oracle)
}
