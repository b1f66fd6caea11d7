//! Accuracy, support-weighted F1, and unweighted average recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub wa_f1: f64,
    pub uar: f64,
    /// Recall of each class; `None` for classes with no true samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn support(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    /// Confusion matrix as CSV with a header row of predicted classes.
    pub fn confusion_csv(&self, names: &[&str]) -> String {
        let label = |i: usize| names.get(i).map(|s| s.to_string()).unwrap_or_else(|| i.to_string());
        let n = self.confusion.len();
        let mut out = String::from("true\\pred");
        for j in 0..n {
            out.push(',');
            out.push_str(&label(j));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&label(i));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Metrics of `preds` against `labels` over `num_classes` classes.
///
/// A class with zero support gets zero weight in WA-F1 and is left out of
/// UAR, even if it was predicted.
pub fn compute_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::Input(format!("class {bad} outside [0, {num_classes})")));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let n = preds.len() as f64;
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let mut wf1 = 0.0;
    let mut recall_sum = 0.0;
    let mut with_support = 0usize;
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|r| r[c]).sum();
        if support == 0 {
            per_class.push(None);
            continue;
        }
        let recall = tp / support as f64;
        // 2PR/(P+R) simplifies to 2tp/(support+predicted)
        let f1 = 2.0 * tp / (support + predicted) as f64;
        wf1 += support as f64 * f1;
        recall_sum += recall;
        with_support += 1;
        per_class.push(Some(recall));
    }
    Ok(MetricsReport {
        acc: correct as f64 / n,
        wa_f1: wf1 / n,
        uar: recall_sum / with_support as f64,
        per_class_accuracy: per_class,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_hand_example() {
        let r = compute_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.acc, 0.75);
        assert!((r.uar - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.wa_f1 - (2.0 / 3.0 + 3.0 * 0.8) / 4.0).abs() < 1e-15);
        assert_eq!(r.support(), vec![1, 3]);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 5];
        let r = compute_metrics(&y, &y, 6).unwrap();
        assert_eq!((r.acc, r.wa_f1, r.uar), (1.0, 1.0, 1.0));
        assert_eq!(r.per_class_accuracy[3], None);
    }

    #[test]
    fn bad_inputs() {
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[0], &[0, 1], 2).is_err());
        assert!(compute_metrics(&[2], &[0], 2).is_err());
    }
}
