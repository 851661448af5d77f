use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion matrix (rows = true class, columns = predicted) and the
/// metrics derived from it. Precision, recall and F1 are macro averages;
/// a class with no predictions (or no samples) contributes 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy_pct: f64,
    pub top1_error_pct: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub confusion: Vec<Vec<usize>>,
    /// Two-class reports only, class 1 positive.
    pub fpr_pct: Option<f64>,
    pub fnr_pct: Option<f64>,
    #[serde(skip)]
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfusionRates {
    pub false_positive_rate_pct: f64,
    pub false_negative_rate_pct: f64,
}

/// FPR = FP/(FP+TN) and FNR = FN/(FN+TP) in percent, class 1 positive.
pub fn confusion_rates(confusion: &[Vec<usize>]) -> Result<ConfusionRates> {
    let [neg, pos] = confusion else {
        return Err(Error::invalid(format!("expected a 2×2 confusion matrix, got {} rows", confusion.len())));
    };
    let (&[tn, fp], &[fn_, tp]) = (neg.as_slice(), pos.as_slice()) else {
        return Err(Error::invalid("expected a 2×2 confusion matrix"));
    };
    if tn + fp == 0 || fn_ + tp == 0 {
        return Err(Error::invalid("confusion matrix has an empty row"));
    }
    Ok(ConfusionRates {
        false_positive_rate_pct: 100.0 * fp as f64 / (fp + tn) as f64,
        false_negative_rate_pct: 100.0 * fn_ as f64 / (fn_ + tp) as f64,
    })
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::invalid(format!("class index outside 0..{classes}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square and non-empty"));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted: usize = confusion.iter().map(|r| r[c]).sum();
                let actual: usize = confusion[c].iter().sum();
                let (precision, recall) = (ratio(tp, predicted), ratio(tp, actual));
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { precision, recall, f1 }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        let accuracy_pct = 100.0 * correct as f64 / total as f64;
        let rates = if k == 2 { confusion_rates(&confusion).ok() } else { None };
        Ok(Self {
            accuracy_pct,
            top1_error_pct: 100.0 - accuracy_pct,
            precision_macro: mean(|c| c.precision),
            recall_macro: mean(|c| c.recall),
            f1_macro: mean(|c| c.f1),
            fpr_pct: rates.map(|r| r.false_positive_rate_pct),
            fnr_pct: rates.map(|r| r.false_negative_rate_pct),
            confusion,
            per_class,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        Self::from_confusion(confusion_matrix(truth, predicted, classes)?)
    }

    pub fn num_samples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Micro-averaged precision, which equals accuracy for single-label data.
    pub fn precision_micro(&self) -> f64 {
        self.accuracy_pct / 100.0
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("accuracy (%)", Some(self.accuracy_pct)),
            ("top-1 error (%)", Some(self.top1_error_pct)),
            ("precision (macro)", Some(self.precision_macro)),
            ("recall (macro)", Some(self.recall_macro)),
            ("f1 (macro)", Some(self.f1_macro)),
            ("false positive rate (%)", self.fpr_pct),
            ("false negative rate (%)", self.fnr_pct),
        ];
        for (name, v) in rows.iter().filter_map(|(n, v)| v.map(|v| (n, v))) {
            s.push_str(&format!("{name:<24} {v:>10.4}\n"));
        }
        s.push_str("confusion (rows = true, cols = predicted)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            s.push_str(&cells.join(""));
            s.push('\n');
        }
        s
    }
}
