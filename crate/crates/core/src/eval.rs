//! Agreement between generated annotations and gold labels.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::seqlabel::{filter_length_mismatch, tags_to_spans, Decoding, SeqLabelError, TaggedSentence};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} rows but gold has {gold}")]
    RowCountMismatch { pred: usize, gold: usize },
    #[error("prediction has {pred} sentences but gold has {gold}")]
    ListLengthMismatch { pred: usize, gold: usize },
    #[error("column `{0}` missing from {1}")]
    UnknownColumn(String, &'static str),
    #[error(transparent)]
    SeqLabel(#[from] SeqLabelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    SpanLabeling,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub task: Task,
    pub n_scored: usize,
    pub n_filtered: usize,
    /// Predictions that were null (classification only); scored as errors.
    pub n_null: usize,
    /// Classification: row accuracy. Span labeling: token accuracy over kept pairs.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_label: BTreeMap<String, LabelScores>,
}

pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, defined as 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// True positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn scores(&self) -> LabelScores {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        LabelScores {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: self.tp + self.fn_,
        }
    }
}

/// Row-aligned label agreement.
///
/// Null predictions count as errors and are reported in `n_null`. Rows whose
/// gold label is null cannot be scored and are counted in `n_filtered`.
/// Micro precision is taken over non-null predictions, recall over all scored
/// rows.
pub fn classification_agreement(pred: &Dataset, gold: &Dataset, label_column: &str) -> Result<AgreementReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::RowCountMismatch { pred: pred.len(), gold: gold.len() });
    }
    let pred_labels = pred
        .column_values(label_column)
        .map_err(|_| EvalError::UnknownColumn(label_column.to_owned(), "predictions"))?;
    let gold_labels = gold
        .column_values(label_column)
        .map_err(|_| EvalError::UnknownColumn(label_column.to_owned(), "gold"))?;

    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    let (mut scored, mut filtered, mut nulls, mut correct) = (0, 0, 0, 0);
    for (p, g) in pred_labels.zip(gold_labels) {
        let Some(g) = g.render() else {
            filtered += 1;
            continue;
        };
        scored += 1;
        match p.render() {
            None => {
                nulls += 1;
                per_label.entry(g).or_default().fn_ += 1;
            }
            Some(p) if p == g => {
                correct += 1;
                per_label.entry(g).or_default().tp += 1;
            }
            Some(p) => {
                per_label.entry(g).or_default().fn_ += 1;
                per_label.entry(p).or_default().fp += 1;
            }
        }
    }
    let precision = ratio(correct, scored - nulls);
    let recall = ratio(correct, scored);
    Ok(AgreementReport {
        task: Task::Classification,
        n_scored: scored,
        n_filtered: filtered,
        n_null: nulls,
        accuracy: ratio(correct, scored),
        precision,
        recall,
        f1: f1_score(precision, recall),
        per_label: per_label.into_iter().map(|(k, c)| (k, c.scores())).collect(),
    })
}

/// Span-level micro P/R/F1 over exact `(start, end, label)` matches, after
/// dropping pairs whose token counts differ.
pub fn span_agreement(pred: &[TaggedSentence], gold: &[TaggedSentence], mode: Decoding) -> Result<AgreementReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::ListLengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    let mut total = Counts::default();
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    let (mut scored, mut filtered, mut tokens, mut tokens_correct) = (0, 0, 0, 0);

    for (p, g) in pred.iter().zip(gold) {
        if !filter_length_mismatch(p, g) {
            filtered += 1;
            continue;
        }
        scored += 1;
        tokens += g.tags.len();
        tokens_correct += p.tags.iter().zip(&g.tags).filter(|(a, b)| a == b).count();

        let p_spans = tags_to_spans(p, mode)?;
        let g_spans = tags_to_spans(g, mode)?;
        let p_keys: HashSet<_> = p_spans.iter().map(|s| s.key()).collect();
        let g_keys: HashSet<_> = g_spans.iter().map(|s| s.key()).collect();
        for key in &p_keys {
            let c = per_label.entry(key.2.to_owned()).or_default();
            if g_keys.contains(key) {
                c.tp += 1;
                total.tp += 1;
            } else {
                c.fp += 1;
                total.fp += 1;
            }
        }
        for key in g_keys.difference(&p_keys) {
            per_label.entry(key.2.to_owned()).or_default().fn_ += 1;
            total.fn_ += 1;
        }
    }
    let overall = total.scores();
    Ok(AgreementReport {
        task: Task::SpanLabeling,
        n_scored: scored,
        n_filtered: filtered,
        n_null: 0,
        accuracy: ratio(tokens_correct, tokens),
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        per_label: per_label.into_iter().map(|(k, c)| (k, c.scores())).collect(),
    })
}

impl AgreementReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for AgreementReport {
    /// Aligned plain-text table.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let task = match self.task {
            Task::Classification => "classification",
            Task::SpanLabeling => "span labeling",
        };
        writeln!(f, "task: {task}")?;
        writeln!(f, "scored: {}  filtered: {}  null predictions: {}", self.n_scored, self.n_filtered, self.n_null)?;
        writeln!(f, "accuracy: {:.4}", self.accuracy)?;
        let width = self.per_label.keys().map(String::len).chain(["overall (micro)".len()]).max().unwrap_or(0);
        writeln!(f, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "label", "precision", "recall", "f1", "support")?;
        for (label, s) in &self.per_label {
            writeln!(f, "{label:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}", s.precision, s.recall, s.f1, s.support)?;
        }
        let support: usize = self.per_label.values().map(|s| s.support).sum();
        write!(
            f,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            "overall (micro)", self.precision, self.recall, self.f1, support
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Record, Value};

    fn labels(values: &[Option<&str>]) -> Dataset {
        let rows = values
            .iter()
            .map(|v| {
                let value = v.map_or(Value::Null, Value::text);
                std::iter::once(("label", value)).collect::<Record>()
            })
            .collect();
        Dataset::new(vec!["label".into()], rows).unwrap()
    }

    fn sent(tags: &str) -> TaggedSentence {
        let tags: Vec<String> = tags.split_whitespace().map(str::to_owned).collect();
        let tokens = (0..tags.len()).map(|i| format!("t{i}")).collect();
        TaggedSentence::new(tokens, tags).unwrap()
    }

    #[test]
    fn identical_labels() {
        let d = labels(&[Some("a"), Some("b")]);
        let r = classification_agreement(&d, &d, "label").unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn three_of_four() {
        let p = labels(&[Some("a"), Some("b"), Some("a"), Some("a")]);
        let g = labels(&[Some("a"), Some("b"), Some("a"), Some("b")]);
        assert_eq!(classification_agreement(&p, &g, "label").unwrap().accuracy, 0.75);
    }

    #[test]
    fn nulls_are_errors() {
        let mut p = vec![None, None];
        let mut g = vec![Some("a"), Some("a")];
        for i in 0..8 {
            p.push(Some(if i < 6 { "a" } else { "b" }));
            g.push(Some("a"));
        }
        let r = classification_agreement(&labels(&p), &labels(&g), "label").unwrap();
        assert_eq!(r.accuracy, 0.6);
        assert_eq!(r.n_null, 2);
        assert_eq!(r.n_scored, 10);
    }

    #[test]
    fn row_count_mismatch() {
        let err = classification_agreement(&labels(&[Some("a")]), &labels(&[]), "label").unwrap_err();
        assert!(matches!(err, EvalError::RowCountMismatch { pred: 1, gold: 0 }));
    }

    #[test]
    fn perfect_spans() {
        let g = vec![sent("B-PER I-PER O B-LOC")];
        let r = span_agreement(&g, &g, Decoding::Lenient).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.n_filtered), (1.0, 1.0, 1.0, 0));
    }

    #[test]
    fn one_hit_one_spurious_one_missed() {
        let g = vec![sent("B-PER I-PER O B-LOC O")];
        let p = vec![sent("B-PER I-PER O O B-ORG")];
        let r = span_agreement(&p, &g, Decoding::Lenient).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.per_label["PER"].f1, 1.0);
        assert_eq!(r.per_label["LOC"].recall, 0.0);
        assert_eq!(r.per_label["ORG"].precision, 0.0);
    }

    #[test]
    fn all_outside_predictions() {
        let g = vec![sent("B-PER O"), sent("O B-LOC")];
        let p = vec![sent("O O"), sent("O O")];
        let r = span_agreement(&p, &g, Decoding::Lenient).unwrap();
        assert_eq!((r.recall, r.f1), (0.0, 0.0));
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn mismatched_lengths_filtered() {
        let g = vec![sent("B-PER O"), sent("O O O")];
        let p = vec![sent("B-PER O"), sent("O O")];
        let r = span_agreement(&p, &g, Decoding::Lenient).unwrap();
        assert_eq!((r.n_scored, r.n_filtered, r.f1), (1, 1, 1.0));
        assert!(matches!(
            span_agreement(&p[..1], &g, Decoding::Lenient),
            Err(EvalError::ListLengthMismatch { .. })
        ));
    }

    #[test]
    fn swapping_swaps_precision_and_recall() {
        let a = vec![sent("B-PER I-PER O B-LOC O"), sent("B-X O B-Y")];
        let b = vec![sent("B-PER I-PER O O B-ORG"), sent("B-X O O")];
        let ab = span_agreement(&a, &b, Decoding::Lenient).unwrap();
        let ba = span_agreement(&b, &a, Decoding::Lenient).unwrap();
        assert_eq!(ab.precision, ba.recall);
        assert_eq!(ab.recall, ba.precision);
        assert_eq!(ab.f1, ba.f1);
    }

    #[test]
    fn table_rendering() {
        let g = vec![sent("B-PER O")];
        let text = span_agreement(&g, &g, Decoding::Lenient).unwrap().to_string();
        assert!(text.contains("PER"));
        assert!(text.lines().last().unwrap().starts_with("overall (micro)"));
    }
}
