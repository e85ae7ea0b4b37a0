//! Confusion counts, per-class scores, and the micro-averaged F over
//! classes 1 and 2 used to rank every model.

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// One-vs-rest counts for each class, indexed by [`Class::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: [ClassCounts; 3],
    pub total: u64,
}

impl ConfusionCounts {
    pub fn class(&self, c: Class) -> &ClassCounts {
        &self.per_class[c.index()]
    }

    /// Gold examples of class `c`.
    pub fn support(&self, c: Class) -> u64 {
        let k = self.class(c);
        k.tp + k.fn_
    }
}

pub fn confusion_counts(gold: &[Class], pred: &[Class]) -> Result<ConfusionCounts> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts = ConfusionCounts {
        total: gold.len() as u64,
        ..Default::default()
    };
    for (&g, &p) in gold.iter().zip(pred) {
        for c in Class::ALL {
            let k = &mut counts.per_class[c.index()];
            match (g == c, p == c) {
                (true, true) => k.tp += 1,
                (false, true) => k.fp += 1,
                (true, false) => k.fn_ += 1,
                (false, false) => k.tn += 1,
            }
        }
    }
    Ok(counts)
}

/// Like [`confusion_counts`] but for raw numeric labels.
pub fn confusion_counts_raw(gold: &[u8], pred: &[u8]) -> Result<ConfusionCounts> {
    let parse = |labels: &[u8]| -> Result<Vec<Class>> {
        labels
            .iter()
            .map(|&l| Class::try_from(l).map_err(Error::InvalidArgument))
            .collect()
    };
    confusion_counts(&parse(gold)?, &parse(pred)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn prf(tp: u64, fp: u64, fn_: u64) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf {
        precision,
        recall,
        f1: f_score(precision, recall),
    }
}

/// Pooled precision, recall and F over classes 1 and 2.
pub fn micro_prf_12(counts: &ConfusionCounts) -> Prf {
    let [c1, c2, _] = counts.per_class;
    prf(c1.tp + c2.tp, c1.fp + c2.fp, c1.fn_ + c2.fn_)
}

pub fn per_class_prf(counts: &ConfusionCounts) -> [Prf; 3] {
    counts.per_class.map(|k| prf(k.tp, k.fp, k.fn_))
}

/// F over classes 1 and 2 for a prediction list.
pub fn f12(gold: &[Class], pred: &[Class]) -> Result<f64> {
    Ok(micro_prf_12(&confusion_counts(gold, pred)?).f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: Class,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The evaluation record written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassReport>,
    pub precision_12: f64,
    pub recall_12: f64,
    pub f1_12: f64,
    pub total: u64,
}

impl MetricReport {
    pub fn from_counts(counts: &ConfusionCounts) -> Self {
        let per = per_class_prf(counts);
        let micro = micro_prf_12(counts);
        Self {
            per_class: Class::ALL
                .iter()
                .map(|&c| ClassReport {
                    class: c,
                    precision: per[c.index()].precision,
                    recall: per[c.index()].recall,
                    f1: per[c.index()].f1,
                    support: counts.support(c),
                })
                .collect(),
            precision_12: micro.precision,
            recall_12: micro.recall,
            f1_12: micro.f1,
            total: counts.total,
        }
    }

    pub fn evaluate(gold: &[Class], pred: &[Class]) -> Result<Self> {
        Ok(Self::from_counts(&confusion_counts(gold, pred)?))
    }
}
