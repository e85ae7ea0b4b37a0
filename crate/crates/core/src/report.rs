//! Ranked-ensemble reports and score tables.

use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_distributions, stack_distributions, SharedEnsemble};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::classify;
use crate::scalar::Real;
use crate::text::EncodedCorpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRow {
    pub rank: usize,
    pub id: String,
    pub train_score: f64,
    pub test: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedRow {
    pub k: usize,
    pub train: Option<MetricReport>,
    pub test: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub individual: Vec<IndividualRow>,
    pub stacked: Vec<StackedRow>,
}

fn evaluate<T: Real>(dists: &[[T; 3]], corpus: &EncodedCorpus<T>) -> Result<MetricReport> {
    let pred: Vec<_> = dists.iter().map(classify).collect();
    MetricReport::evaluate(corpus.labels(), &pred)
}

/// Scores every ranked ensemble and the top-K stack for each requested K.
///
/// Individual rows carry the stored training score; stacked rows are scored
/// on `train` (and `test`, when given). A K larger than the number of
/// ensembles yields an error entry instead of failing the report.
pub fn emit_ranking_report<T: Real>(
    ranked: &[SharedEnsemble<T>],
    train: &EncodedCorpus<T>,
    test: Option<&EncodedCorpus<T>>,
    ks: &[usize],
) -> Result<RankingReport> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("no ranked ensembles to report".into()));
    }
    let max_k = ks.iter().copied().filter(|&k| k <= ranked.len()).max().unwrap_or(0);
    let train_dists = ranked[..max_k]
        .iter()
        .map(|e| ensemble_distributions(e, train))
        .collect::<Result<Vec<_>>>()?;
    let test_dists = match test {
        Some(t) => Some(
            ranked
                .iter()
                .map(|e| ensemble_distributions(e, t))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let mut individual = Vec::with_capacity(ranked.len());
    for (i, ens) in ranked.iter().enumerate() {
        let test = match (test, &test_dists) {
            (Some(t), Some(d)) => Some(evaluate(&d[i], t)?),
            _ => None,
        };
        individual.push(IndividualRow {
            rank: i + 1,
            id: ens.id.clone(),
            train_score: ens.train_score,
            test,
        });
    }

    let mut stacked = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > ranked.len() {
            stacked.push(StackedRow {
                k,
                train: None,
                test: None,
                error: Some(format!("K = {k} outside 1..={}", ranked.len())),
            });
            continue;
        }
        let train_report = evaluate(&stack_distributions(&train_dists[..k])?, train)?;
        let test_report = match (test, &test_dists) {
            (Some(t), Some(d)) => Some(evaluate(&stack_distributions(&d[..k])?, t)?),
            _ => None,
        };
        stacked.push(StackedRow {
            k,
            train: Some(train_report),
            test: test_report,
            error: None,
        });
    }
    Ok(RankingReport {
        individual,
        stacked,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

impl RankingReport {
    /// Tab-separated form, one row per ensemble then one per K.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\trank_or_k\tid\ttrain_f12\ttest_p12\ttest_r12\ttest_f12\terror\n");
        for r in &self.individual {
            out.push_str(&format!(
                "ensemble\t{}\t{}\t{:.6}\t{}\t{}\t{}\t\n",
                r.rank,
                r.id,
                r.train_score,
                opt(r.test.as_ref().map(|t| t.precision_12)),
                opt(r.test.as_ref().map(|t| t.recall_12)),
                opt(r.test.as_ref().map(|t| t.f1_12)),
            ));
        }
        for s in &self.stacked {
            out.push_str(&format!(
                "stacked\t{}\ttop-{}\t{}\t{}\t{}\t{}\t{}\n",
                s.k,
                s.k,
                opt(s.train.as_ref().map(|t| t.f1_12)),
                opt(s.test.as_ref().map(|t| t.precision_12)),
                opt(s.test.as_ref().map(|t| t.recall_12)),
                opt(s.test.as_ref().map(|t| t.f1_12)),
                s.error.as_deref().unwrap_or(""),
            ));
        }
        out
    }

    /// Aligned text: ranked ensembles, then stacked scores per K laid out as
    /// per-class precision/recall/F plus the micro-averaged scores.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:>4}  {:<10}  {:>9}  {:>8}\n", "rank", "ensemble", "train F12", "test F12");
        for r in &self.individual {
            out.push_str(&format!(
                "{:>4}  {:<10}  {:>9.4}  {:>8}\n",
                r.rank,
                r.id,
                r.train_score,
                r.test.as_ref().map_or_else(|| "-".into(), |t| format!("{:.4}", t.f1_12)),
            ));
        }
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        for s in &self.stacked {
            let name = format!("Top{}", s.k);
            if let Some(e) = &s.error {
                out.push_str(&format!("\n{name}: {e}"));
            }
            if let Some(t) = &s.train {
                train_rows.push((name.clone(), t));
            }
            if let Some(t) = &s.test {
                test_rows.push((name, t));
            }
        }
        if !self.stacked.iter().all(|s| s.error.is_none()) {
            out.push('\n');
        }
        if !train_rows.is_empty() {
            out.push_str("\nstacked ensembles, training data\n");
            out.push_str(&metric_table(&train_rows));
        }
        if !test_rows.is_empty() {
            out.push_str("\nstacked ensembles, test data\n");
            out.push_str(&metric_table(&test_rows));
        }
        out
    }
}

/// Per-class P/R/F columns followed by R12, P12, F12.
pub fn metric_table(rows: &[(String, &MetricReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}", "");
    for head in ["P1", "P2", "P3", "R1", "R2", "R3", "F1", "F2", "F3", "R12", "P12", "F12"] {
        out.push_str(&format!("  {head:>5}"));
    }
    out.push('\n');
    for (name, m) in rows {
        out.push_str(&format!("{name:<width$}"));
        let cells = m
            .per_class
            .iter()
            .map(|c| c.precision)
            .chain(m.per_class.iter().map(|c| c.recall))
            .chain(m.per_class.iter().map(|c| c.f1))
            .chain([m.recall_12, m.precision_12, m.f1_12]);
        for v in cells {
            out.push_str(&format!("  {v:>5.3}"));
        }
        out.push('\n');
    }
    out
}
