//! Classification and joint entity/role scoring.
//!
//! All reported numbers are percentages rounded half-up to two decimals.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::entmatch::MatchOutcome;
use crate::error::MetricsError;

/// Round a percentage half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    // The nudge keeps values like 43.755 (stored as 43.75499..) rounding up.
    ((x * 100.0) + 0.5 + 1e-7).floor() / 100.0
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn weighted_average(values: &[(f64, usize)]) -> f64 {
    let total: usize = values.iter().map(|(_, s)| s).sum();
    if total == 0 {
        return 0.0;
    }
    values.iter().map(|(v, s)| v * *s as f64).sum::<f64>() / total as f64
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Run settings attached to a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub strategy: String,
    pub shots: usize,
    pub split_seed: u64,
    pub shot_seed: u64,
    pub tie_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Items with no usable prediction; scored as wrong for every class.
    pub abstentions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ReportMeta>,
}

/// One-vs-rest precision/recall/F1 per label, plus accuracy and averages.
///
/// Labels reported are those occurring as gold or as a prediction, in
/// taxonomy order. A `None` prediction counts against recall of the gold
/// class and is never a false positive.
pub fn classification_report<L: Label>(
    pairs: &[(L, Option<L>)],
) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let labels: BTreeSet<L> = pairs
        .iter()
        .flat_map(|(g, p)| std::iter::once(*g).chain(*p))
        .collect();

    let mut per_class = Vec::with_capacity(labels.len());
    let mut raw = Vec::with_capacity(labels.len());
    for &label in &labels {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (gold, pred) in pairs {
            let predicted = *pred == Some(label);
            match (*gold == label, predicted) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = pct(tp, tp + fp);
        let recall = pct(tp, tp + fn_);
        let f1 = f1_score(precision, recall);
        let support = tp + fn_;
        raw.push((precision, recall, f1, support));
        per_class.push(ClassReport {
            label: label.canonical().to_string(),
            precision: round2(precision),
            recall: round2(recall),
            f1: round2(f1),
            support,
        });
    }

    let total = pairs.len();
    let correct = pairs.iter().filter(|(g, p)| Some(*g) == *p).count();
    let abstentions = pairs.iter().filter(|(_, p)| p.is_none()).count();
    let column = |i: usize| -> Vec<f64> {
        raw.iter()
            .map(|r| match i {
                0 => r.0,
                1 => r.1,
                _ => r.2,
            })
            .collect()
    };
    let weighted = |i: usize| -> f64 {
        let vals: Vec<(f64, usize)> = column(i)
            .into_iter()
            .zip(raw.iter().map(|r| r.3))
            .collect();
        weighted_average(&vals)
    };
    Ok(EvalReport {
        per_class,
        accuracy: round2(pct(correct, total)),
        macro_avg: Averages {
            precision: round2(macro_average(&column(0))),
            recall: round2(macro_average(&column(1))),
            f1: round2(macro_average(&column(2))),
            support: total,
        },
        weighted_avg: Averages {
            precision: round2(weighted(0)),
            recall: round2(weighted(1)),
            f1: round2(weighted(2)),
            support: total,
        },
        abstentions,
        meta: None,
    })
}

impl EvalReport {
    pub fn with_meta(mut self, meta: ReportMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max(16);
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}",
            "", "Prec.", "Rec.", "F1", "Support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7.2}  {:>7}",
            "Accuracy", "", "", self.accuracy, self.macro_avg.support
        );
        for (name, avg) in [("Macro Average", &self.macro_avg), ("Weighted Average", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7}",
                name, avg.precision, avg.recall, avg.f1, avg.support
            );
        }
        if self.abstentions > 0 {
            let _ = writeln!(out, "abstained/failed items: {}", self.abstentions);
        }
        out
    }

    /// Per-class rows as CSV: `label,precision,recall,f1,support`.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["label", "precision", "recall", "f1", "support"])
            .expect("in-memory csv write");
        for row in &self.per_class {
            writer
                .write_record([
                    row.label.clone(),
                    format!("{:.2}", row.precision),
                    format!("{:.2}", row.recall),
                    format!("{:.2}", row.f1),
                    row.support.to_string(),
                ])
                .expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

/// Percentages for joint entity and role identification, over predicted fills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub total_fills: usize,
    pub correct_entity: usize,
    pub hallucinated: usize,
    pub not_applicable: usize,
    pub correct_role: usize,
    pub pct_correct_entity: f64,
    pub pct_hallucination: f64,
    pub pct_correct_role: f64,
    /// Secondary view: distinct gold entities recovered by at least one fill.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_entities: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_entities_matched: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pct_gold_entity_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ReportMeta>,
}

/// Percentages over all predicted fills. `role_correct` is only meaningful
/// for matched fills and is ignored otherwise.
pub fn joint_report(outcomes: &[(MatchOutcome, Option<bool>)]) -> Result<JointReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total = outcomes.len();
    let correct_entity = outcomes.iter().filter(|(o, _)| o.is_match()).count();
    let hallucinated = outcomes.iter().filter(|(o, _)| o.is_hallucination()).count();
    let correct_role = outcomes
        .iter()
        .filter(|(o, r)| o.is_match() && *r == Some(true))
        .count();
    Ok(JointReport {
        total_fills: total,
        correct_entity,
        hallucinated,
        not_applicable: total - correct_entity - hallucinated,
        correct_role,
        pct_correct_entity: round2(pct(correct_entity, total)),
        pct_hallucination: round2(pct(hallucinated, total)),
        pct_correct_role: round2(pct(correct_role, total)),
        gold_entities: None,
        gold_entities_matched: None,
        pct_gold_entity_recall: None,
        meta: None,
    })
}

impl JointReport {
    pub fn with_gold_recall(mut self, matched: usize, total: usize) -> Self {
        self.gold_entities = Some(total);
        self.gold_entities_matched = Some(matched);
        self.pct_gold_entity_recall = Some(round2(pct(matched, total)));
        self
    }

    pub fn with_meta(mut self, meta: ReportMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "% Correct Entity Identification  {:>6.2}  ({}/{})", self.pct_correct_entity, self.correct_entity, self.total_fills);
        let _ = writeln!(out, "% Hallucination                  {:>6.2}  ({}/{})", self.pct_hallucination, self.hallucinated, self.total_fills);
        let _ = writeln!(out, "% Correct Role Identification    {:>6.2}  ({}/{})", self.pct_correct_role, self.correct_role, self.total_fills);
        if let (Some(recall), Some(m), Some(t)) = (self.pct_gold_entity_recall, self.gold_entities_matched, self.gold_entities) {
            let _ = writeln!(out, "% Gold entities recovered        {recall:>6.2}  ({m}/{t})");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,percent,count,denominator\n");
        let rows = [
            ("correct_entity", self.pct_correct_entity, self.correct_entity),
            ("hallucination", self.pct_hallucination, self.hallucinated),
            ("correct_role", self.pct_correct_role, self.correct_role),
        ];
        for (name, p, c) in rows {
            let _ = writeln!(out, "{name},{p:.2},{c},{}", self.total_fills);
        }
        out
    }
}
