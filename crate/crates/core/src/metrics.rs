//! Accuracy, macro F1 and macro one-vs-rest AUC over a node subset.

use crate::autodiff::Matrix;
use crate::classifier::softmax_rows;
use crate::error::{Error, Result};

fn check_subset(scores: &Matrix, labels: &[usize], subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::Argument("metric over an empty node subset".into()));
    }
    if labels.len() != scores.nrows() {
        return Err(Error::Argument(format!(
            "{} labels for {} rows",
            labels.len(),
            scores.nrows()
        )));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= scores.nrows()) {
        return Err(Error::Argument(format!("node {i} out of range")));
    }
    Ok(())
}

/// Index of the row maximum; ties go to the lowest class.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predictions(logits: &Matrix) -> Vec<usize> {
    logits.rows().into_iter().map(argmax).collect()
}

pub fn accuracy(logits: &Matrix, labels: &[usize], subset: &[usize]) -> Result<f64> {
    check_subset(logits, labels, subset)?;
    let pred = predictions(logits);
    let hits = subset.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(hits as f64 / subset.len() as f64)
}

/// Macro F1 over the classes that occur among the subset's labels or predictions.
pub fn macro_f1(logits: &Matrix, labels: &[usize], subset: &[usize]) -> Result<f64> {
    check_subset(logits, labels, subset)?;
    let c = logits.ncols();
    let pred = predictions(logits);
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fn_ = vec![0usize; c];
    for &i in subset {
        let (y, p) = (labels[i], pred[i]);
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let mut total = 0.0;
    let mut counted = 0;
    for k in 0..c {
        if tp[k] + fp[k] + fn_[k] == 0 {
            continue;
        }
        counted += 1;
        let denom = 2 * tp[k] + fp[k] + fn_[k];
        total += 2.0 * tp[k] as f64 / denom as f64;
    }
    Ok(total / counted as f64)
}

/// Area under the ROC curve by the trapezoid rule over distinct thresholds.
///
/// Returns `None` when either class is absent.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Area in units of one positive-negative pair, doubled to stay integral.
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area = 0u64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
    }
    Some(twice_area as f64 / (2.0 * p as f64 * n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucResult {
    pub value: f64,
    /// Classes with no positives or no negatives in the subset.
    pub excluded: Vec<usize>,
}

/// Macro one-vs-rest AUC on softmax scores. When every class is excluded the
/// value is 0.5.
pub fn macro_auc(logits: &Matrix, labels: &[usize], subset: &[usize]) -> Result<AucResult> {
    check_subset(logits, labels, subset)?;
    let probs = softmax_rows(logits);
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut used = 0;
    for k in 0..logits.ncols() {
        let scores: Vec<f64> = subset.iter().map(|&i| probs[[i, k]]).collect();
        let pos: Vec<bool> = subset.iter().map(|&i| labels[i] == k).collect();
        match binary_auc(&scores, &pos) {
            Some(a) => {
                sum += a;
                used += 1;
            }
            None => excluded.push(k),
        }
    }
    let value = if used == 0 { 0.5 } else { sum / used as f64 };
    Ok(AucResult { value, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_predictions() {
        let logits = array![[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0], [4.0, 1.0, 0.0]];
        let labels = [0, 1, 2, 0];
        let all = [0, 1, 2, 3];
        assert_eq!(accuracy(&logits, &labels, &all).unwrap(), 1.0);
        assert_eq!(macro_f1(&logits, &labels, &all).unwrap(), 1.0);
        let auc = macro_auc(&logits, &labels, &all).unwrap();
        assert_eq!(auc.value, 1.0);
        assert!(auc.excluded.is_empty());
    }

    #[test]
    fn perfect_ranking_binary() {
        let a = binary_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(a, 1.0);
        assert_eq!(binary_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn interleaved_ranking_matches_pair_count() {
        // Pairs (pos, neg): (0.9,0.3) (0.9,0.1) (0.8,0.3) (0.8,0.1) all concordant.
        let a = binary_auc(&[0.9, 0.3, 0.8, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(a, 1.0);
        // 0.5 positive vs 0.6 and 0.4 negatives: one of two pairs concordant.
        let b = binary_auc(&[0.5, 0.6, 0.4], &[true, false, false]).unwrap();
        assert_eq!(b, 0.5);
        // A tie counts half.
        let c = binary_auc(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(c, 0.5);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let logits = array![[1.0, 1.0], [0.0, 0.0]];
        assert_eq!(predictions(&logits), vec![0, 0]);
    }

    #[test]
    fn missing_class_is_excluded() {
        let logits = array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let r = macro_auc(&logits, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(r.value, 1.0);
        assert!(accuracy(&logits, &[0, 1], &[]).is_err());
    }

    #[test]
    fn f1_hand_value() {
        // labels 0,0,1,1 predicted 0,1,1,1: class0 F1 = 2/3, class1 F1 = 4/5.
        let logits = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let f1 = macro_f1(&logits, &[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap();
        assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }
}
