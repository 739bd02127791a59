//! Confusion counts, averaged precision/recall/F1, one-vs-rest ROC/AUC, and
//! the ablation, noise and latency harnesses.

mod harness;
mod report;

pub use harness::{
    ablate, evaluate_classifier, evaluate_knn, latency_bench, machine_description, noise_robustness,
    AblationRow, AblationTable, BenchReport, Evaluation, Robustness,
};
pub use report::{metrics_text, sanitize_label, write_bench, write_evaluation, write_metrics_report, write_roc_csvs};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    /// Builds a matrix from explicit rows.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion rows must form a square matrix".into()));
        }
        Ok(Self { k, counts: rows.concat() })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.trace() as f64 / n as f64)
    }

    /// Plain K x K grid, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for t in 0..self.k {
            let row: Vec<String> = self.row(t).iter().map(u64::to_string).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(truths) {
        for index in [p, t] {
            if index >= k {
                return Err(Error::ClassOutOfRange { index, bound: k });
            }
        }
        m.counts[t * k + p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True documents of this class.
    pub support: u64,
    /// Documents predicted as this class.
    pub predicted: u64,
    /// Set when no document was predicted as this class.
    pub precision_undefined: bool,
    /// Set when the class has no true documents.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes.
    pub macro_avg: Averages,
    /// Mean weighted by true-class support.
    pub weighted: Averages,
    /// `None` for classes skipped by the ROC computation.
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
}

impl MetricsReport {
    pub fn with_roc(mut self, roc: &RocReport) -> Self {
        self.per_class_auc = roc.classes.iter().map(|c| c.as_ref().map(|c| c.auc)).collect();
        self.macro_auc = roc.macro_auc;
        self
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(m: &ConfusionMatrix) -> Result<MetricsReport> {
    let n = m.total();
    if n == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let per_class: Vec<ClassMetrics> = (0..m.classes())
        .map(|c| {
            let tp = m.get(c, c);
            let (support, predicted) = (m.row_sum(c), m.col_sum(c));
            let (precision, precision_undefined) = ratio(tp, predicted);
            let (recall, recall_undefined) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                predicted,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let wmean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        samples: n,
        accuracy: m.trace() as f64 / n as f64,
        macro_avg: Averages {
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
        },
        weighted: Averages {
            precision: wmean(|c| c.precision),
            recall: wmean(|c| c.recall),
            f1: wmean(|c| c.f1),
        },
        per_class,
        per_class_auc: Vec::new(),
        macro_auc: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRoc {
    pub auc: f64,
    /// From `(0, 0)` at threshold `+inf` down to `(1, 1)`, one point per
    /// distinct score.
    pub points: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocReport {
    pub classes: Vec<Option<ClassRoc>>,
    pub macro_auc: Option<f64>,
}

/// One-vs-rest ROC for a single class. `None` when either side is empty.
///
/// The AUC is the rank statistic `P(score_pos > score_neg) + P(equal) / 2`,
/// accumulated in integers and divided once, which equals the trapezoid area
/// under the tie-grouped curve.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<ClassRoc> {
    let p = positive.iter().filter(|&&b| b).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // Negatives strictly below the current group, taken from the bottom.
    let mut neg_below = n;
    let mut twice_area: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        neg_below -= gn;
        twice_area += u128::from(gp) * u128::from(2 * neg_below + gn);
        tp += gp;
        fp += gn;
        points.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: s,
        });
    }
    let auc = twice_area as f64 / (2.0 * p as f64 * n as f64);
    Some(ClassRoc { auc, points })
}

pub fn roc_auc(scores: &[Vec<f32>], truths: &[usize]) -> Result<RocReport> {
    if scores.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} score vectors for {} truths",
            scores.len(),
            truths.len()
        )));
    }
    let k = scores.first().ok_or(Error::Empty("score list"))?.len();
    for (s, &t) in scores.iter().zip(truths) {
        if s.len() != k {
            return Err(Error::Shape("score vectors differ in length".into()));
        }
        if t >= k {
            return Err(Error::ClassOutOfRange { index: t, bound: k });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite score".into()));
        }
    }
    let classes: Vec<Option<ClassRoc>> = (0..k)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|s| f64::from(s[c])).collect();
            let pos: Vec<bool> = truths.iter().map(|&t| t == c).collect();
            let roc = binary_roc(&col, &pos);
            if roc.is_none() {
                log::warn!("class {c} has no positive or no negative documents; skipped in ROC");
            }
            roc
        })
        .collect();
    let aucs: Vec<f64> = classes.iter().flatten().map(|c| c.auc).collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(RocReport { classes, macro_auc })
}

/// Area under a curve by the trapezoid rule.
pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}
