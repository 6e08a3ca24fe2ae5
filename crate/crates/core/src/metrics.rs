//! Confusion matrices and accuracy / precision / recall / F1 reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::arg("confusion matrix must be square"));
        }
        Ok(Self { n_classes: n, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.n_classes;
        if truth >= n || pred >= n {
            return Err(Error::arg(format!("class index ({truth}, {pred}) out of range for {n} classes")));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::arg(format!("{} predictions but {} truths", preds.len(), truths.len())));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (&p, &t) in preds.iter().zip(truths) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Trace over total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::UndefinedMetric("accuracy of an empty confusion matrix".into())),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Nothing was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// The class never occurs; recall reported as 0.
    pub recall_undefined: bool,
}

pub fn per_class(cm: &ConfusionMatrix, c: usize) -> Result<ClassMetrics> {
    if c >= cm.n_classes() {
        return Err(Error::arg(format!("class {c} out of range for {} classes", cm.n_classes())));
    }
    let tp = cm.get(c, c);
    let fp = cm.col_sum(c) - tp;
    let fn_ = cm.row_sum(c) - tp;
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
        tp,
        fp,
        fn_,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub class: String,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub classes: Vec<NamedMetrics>,
    pub confusion: ConfusionMatrix,
}

pub fn report(cm: &ConfusionMatrix, class_names: &[impl AsRef<str>]) -> Result<EvalReport> {
    let n = cm.n_classes();
    if class_names.len() != n {
        return Err(Error::ClassCountMismatch {
            expected: n,
            found: class_names.len(),
        });
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("report over zero classes".into()));
    }
    let classes = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            Ok(NamedMetrics {
                class: name.as_ref().to_string(),
                metrics: per_class(cm, c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(|c| f(&c.metrics)).sum::<f64>() / n as f64;
    Ok(EvalReport {
        total: cm.total(),
        accuracy: accuracy(cm)?,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        classes,
        confusion: cm.clone(),
    })
}

impl EvalReport {
    /// Aligned plain-text table; values printed with five decimals.
    pub fn to_text(&self) -> String {
        let width = self.classes.iter().map(|c| c.class.len()).max().unwrap_or(5).max(9);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>8}", "class", "precision", "recall", "f1", "support");
        for c in &self.classes {
            let m = &c.metrics;
            let flag = if m.precision_undefined || m.recall_undefined { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.5}  {:>9.5}  {:>9.5}  {:>8}{flag}",
                c.class, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.5}  {:>9.5}  {:>9.5}  {:>8}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        let _ = writeln!(s, "accuracy {:.5} over {} samples", self.accuracy, self.total);
        if self.classes.iter().any(|c| c.metrics.precision_undefined || c.metrics.recall_undefined) {
            let _ = writeln!(s, "* zero denominator, metric reported as 0");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_counts_pairs() {
        let cm = confusion(&[0, 1], &[1, 1], 2).unwrap();
        assert_eq!(cm.rows(), &[vec![0, 0], vec![1, 1]]);
        let diag = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(diag.trace(), diag.total());
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::new(3));
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let cm = ConfusionMatrix::from_rows(vec![vec![8, 2], vec![3, 7]]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
        let ones = ConfusionMatrix::from_rows(vec![vec![1; 3]; 3]).unwrap();
        assert!((accuracy(&ones).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(accuracy(&ConfusionMatrix::new(2)), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn worked_binary_example() {
        let cm = ConfusionMatrix::from_rows(vec![vec![8, 2], vec![3, 7]]).unwrap();
        let m = per_class(&cm, 0).unwrap();
        assert_eq!(format!("{:.5}", m.precision), "0.72727");
        assert_eq!(format!("{:.5}", m.recall), "0.80000");
        assert_eq!(format!("{:.5}", m.f1), "0.76190");
        assert_eq!((m.tp, m.fp, m.fn_, m.support), (8, 3, 2, 10));
        let one = per_class(&cm, 1).unwrap();
        assert_eq!((one.tp, one.fp, one.fn_), (7, 2, 3));
        assert_eq!(one.precision, 7.0 / 9.0);
        assert_eq!(one.recall, 0.7);
    }

    #[test]
    fn absent_class_is_flagged_zero() {
        let cm = confusion(&[0, 0], &[0, 0], 2).unwrap();
        let m = per_class(&cm, 1).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined && m.recall_undefined);
        let p = per_class(&cm, 0).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        assert!(report(&cm, &["a", "b"]).unwrap().to_text().contains('*'));
    }

    #[test]
    fn diagonal_report_is_perfect() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let r = report(&cm, &["Encrypted", "Benign", "Malware"]).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.macro_precision, r.macro_recall), (1.0, 1.0, 1.0, 1.0));
        assert!(report(&cm, &["a"]).is_err());
    }

    #[test]
    fn report_json_round_trips() {
        let cm = ConfusionMatrix::from_rows(vec![vec![8, 2], vec![3, 7]]).unwrap();
        let r = report(&cm, &["x", "y"]).unwrap();
        let j = serde_json::to_string(&r).unwrap();
        assert!(j.contains("\"fn\":2"));
        assert_eq!(serde_json::from_str::<EvalReport>(&j).unwrap(), r);
        let text = r.to_text();
        assert!(text.contains("0.72727"));
        assert!(text.contains("accuracy 0.75000 over 20 samples"));
    }

    fn arb_pairs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..=8).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 1..200)))
    }

    proptest! {
        #[test]
        fn permuting_classes_permutes_metrics((n, pairs) in arb_pairs(), rot in 0usize..8) {
            let perm = |c: usize| (c + rot) % n;
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truths: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let a = confusion(&preds, &truths, n).unwrap();
            let pp: Vec<usize> = preds.iter().map(|&c| perm(c)).collect();
            let pt: Vec<usize> = truths.iter().map(|&c| perm(c)).collect();
            let b = confusion(&pp, &pt, n).unwrap();
            prop_assert_eq!(accuracy(&a).unwrap(), accuracy(&b).unwrap());
            for c in 0..n {
                prop_assert_eq!(per_class(&a, c).unwrap(), per_class(&b, perm(c)).unwrap());
            }
            let names: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let (ra, rb) = (report(&a, &names).unwrap(), report(&b, &names).unwrap());
            prop_assert!((ra.macro_f1 - rb.macro_f1).abs() < 1e-12);
        }

        #[test]
        fn accuracy_is_one_iff_diagonal((n, pairs) in arb_pairs()) {
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truths: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let cm = confusion(&preds, &truths, n).unwrap();
            let acc = accuracy(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert_eq!(acc == 1.0, preds == truths);
        }
    }
}
