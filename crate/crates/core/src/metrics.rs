//! Classification metrics. Metrics with a zero denominator are `None`
//! ("undefined"), never silently 0.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::numerics::Matrix;

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }

    /// CSV with a header row of predicted class names and one row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for name in class_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for t in 0..self.num_classes {
            out.push_str(&csv_field(&class_names[t]));
            for p in 0..self.num_classes {
                out.push_str(&format!(",{}", self.get(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        String::from(s)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    ensure_shape("prediction count", truth.len(), predicted.len())?;
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        cm.counts[t * num_classes + p] += 1;
    }
    Ok(cm)
}

/// Row-wise argmax; ties go to the lower class index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn binary_metrics(cm: &ConfusionMatrix, positive_class: usize) -> Result<BinaryMetrics> {
    if cm.num_classes != 2 {
        return Err(Error::Config(format!(
            "sensitivity/specificity need 2 classes, got {}",
            cm.num_classes
        )));
    }
    if positive_class > 1 {
        return Err(Error::LabelOutOfRange {
            label: positive_class,
            num_classes: 2,
        });
    }
    let neg = 1 - positive_class;
    let tp = cm.get(positive_class, positive_class);
    let fn_ = cm.get(positive_class, neg);
    let tn = cm.get(neg, neg);
    let fp = cm.get(neg, positive_class);
    Ok(BinaryMetrics {
        accuracy: ratio(tp + tn, cm.total()),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

/// Fraction of rows whose true label ranks among the `k` largest logits, for
/// each `k`. Equal logits rank the lower class index first.
pub fn topk_accuracy(logits: &Matrix, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    ensure_shape("label count", logits.rows(), labels.len())?;
    let classes = logits.cols();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > classes) {
        return Err(Error::TopKOutOfRange { k, num_classes: classes });
    }
    let mut ranks = Vec::with_capacity(labels.len());
    for (row, &label) in logits.iter_rows().zip(labels) {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, num_classes: classes });
        }
        let target = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < label))
            .count();
        ranks.push(rank);
    }
    let n = labels.len();
    Ok(ks
        .iter()
        .map(|&k| {
            if n == 0 {
                0.0
            } else {
                ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64
            }
        })
        .collect())
}

/// Mean and sample standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Number of defined values.
    pub count: usize,
    pub undefined: usize,
}

pub fn summarize(values: &[Option<f64>]) -> MetricSummary {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let count = defined.len();
    let mean = (count > 0).then(|| defined.iter().sum::<f64>() / count as f64);
    let std = mean.map(|m| {
        if count < 2 {
            0.0
        } else {
            libm::sqrt(defined.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64)
        }
    });
    MetricSummary {
        mean,
        std,
        count,
        undefined: values.len() - count,
    }
}
