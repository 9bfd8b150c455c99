//! Classification metrics: weighted F1, AUROC and AUPRC.

use serde::{Deserialize, Serialize};

use crate::data::MarkMode;
use crate::error::AnalysisError;

/// Area under the ROC curve as the normalised Mann-Whitney statistic;
/// tied scores get half credit.
pub fn auroc(scores: &[f64], targets: &[bool]) -> Result<f64, AnalysisError> {
    if scores.len() != targets.len() {
        return Err(AnalysisError::Mismatch(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AnalysisError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| targets[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve by the trapezoid rule over
/// distinct score thresholds, starting from `(recall 0, precision 1)`.
pub fn auprc(scores: &[f64], targets: &[bool]) -> Result<f64, AnalysisError> {
    if scores.len() != targets.len() {
        return Err(AnalysisError::Mismatch(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let n_pos = targets.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return Err(AnalysisError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if targets[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let r = tp as f64 / n_pos as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
        i = j + 1;
    }
    Ok(area)
}

/// Support-weighted F1 over classes `0..num_classes`.
pub fn weighted_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<f64, AnalysisError> {
    if predicted.len() != truth.len() {
        return Err(AnalysisError::Mismatch(format!(
            "{} predictions for {} targets",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        support[t] += 1;
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
        }
    }
    let total = truth.len() as f64;
    Ok((0..num_classes)
        .filter(|&c| support[c] > 0)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + (support[c] - tp[c]);
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 };
            f1 * support[c] as f64 / total
        })
        .sum())
}

/// Mean AUROC over columns that contain both classes.
pub fn mean_column_auroc(scores: &[Vec<f64>], targets: &[Vec<u8>]) -> Result<f64, AnalysisError> {
    let m = scores.first().map_or(0, Vec::len);
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..m {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let t: Vec<bool> = targets.iter().map(|r| r[c] != 0).collect();
        match auroc(&s, &t) {
            Ok(a) => {
                total += a;
                used += 1;
            }
            Err(AnalysisError::SingleClass) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(AnalysisError::SingleClass);
    }
    Ok(total / used as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Next-mark metrics. Multi-class: weighted F1 of the argmax and one-vs-rest
/// mean AUROC. Multi-label: per-mark mean AUROC.
pub fn classification_metrics(
    scores: &[Vec<f64>],
    targets: &[Vec<u8>],
    mode: MarkMode,
) -> Result<ClassificationMetrics, AnalysisError> {
    if scores.len() != targets.len() {
        return Err(AnalysisError::Mismatch(format!(
            "{} score rows for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if scores.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let auroc = mean_column_auroc(scores, targets).ok();
    match mode {
        MarkMode::MultiClass => {
            let m = scores[0].len();
            let pred: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
            let truth: Vec<usize> = targets
                .iter()
                .map(|t| t.iter().position(|&b| b != 0).unwrap_or(0))
                .collect();
            Ok(ClassificationMetrics {
                f1: Some(weighted_f1(&pred, &truth, m)?),
                auroc,
                auprc: None,
            })
        }
        MarkMode::MultiLabel => Ok(ClassificationMetrics {
            f1: None,
            auroc: Some(auroc.ok_or(AnalysisError::SingleClass)?),
            auprc: None,
        }),
    }
}

/// Outcome metrics from probabilities: weighted F1 at threshold 0.5, AUROC
/// and AUPRC.
pub fn binary_metrics(probabilities: &[f64], labels: &[u8]) -> Result<ClassificationMetrics, AnalysisError> {
    let t: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let pred: Vec<usize> = probabilities.iter().map(|&p| usize::from(p >= 0.5)).collect();
    let truth: Vec<usize> = labels.iter().map(|&l| usize::from(l != 0)).collect();
    Ok(ClassificationMetrics {
        f1: Some(weighted_f1(&pred, &truth, 2)?),
        auroc: Some(auroc(probabilities, &t)?),
        auprc: Some(auprc(probabilities, &t)?),
    })
}
