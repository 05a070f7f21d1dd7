//! Detection and classification metrics for open-set evaluation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Probability that a random known sample scores above a random unknown one,
/// ties counting one half. Computed from midranks in `O(n log n)`.
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::InvalidArgument("auroc needs nonempty known and unknown scores".into()));
    }
    if known.iter().chain(unknown).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("auroc scores must not be NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&v| (v, true))
        .chain(unknown.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of 1-based midranks of the known samples.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (n1, n0) = (known.len() as f64, unknown.len() as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Per-class precision, recall and F1 over `classes` labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub tp: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl ClassStats {
    pub fn f1(&self) -> f64 {
        if self.predicted + self.actual == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / (self.predicted + self.actual) as f64
    }

    pub fn recall(&self) -> Option<f64> {
        (self.actual > 0).then(|| self.tp as f64 / self.actual as f64)
    }
}

pub fn class_stats(preds: &[usize], truths: &[usize], classes: usize) -> Result<Vec<ClassStats>> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    let mut stats = vec![
        ClassStats {
            tp: 0,
            predicted: 0,
            actual: 0
        };
        classes
    ];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= classes || t >= classes {
            return Err(Error::LabelOutOfRange {
                label: p.max(t),
                classes,
            });
        }
        stats[p].predicted += 1;
        stats[t].actual += 1;
        if p == t {
            stats[p].tp += 1;
        }
    }
    Ok(stats)
}

/// Unweighted mean of per-class F1 over classes that occur in either list.
pub fn f_score_macro(preds: &[usize], truths: &[usize]) -> Result<f64> {
    let classes = preds.iter().chain(truths).max().map_or(0, |m| m + 1);
    let stats = class_stats(preds, truths, classes)?;
    let present: Vec<f64> = stats
        .iter()
        .filter(|s| s.predicted + s.actual > 0)
        .map(ClassStats::f1)
        .collect();
    if present.is_empty() {
        return Err(Error::InvalidArgument("f-score of an empty label set".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::InvalidArgument("accuracy needs equal, nonempty lists".into()));
    }
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `1 − sqrt(k_train / k_test)`.
pub fn openness(k_train: usize, k_test: usize) -> Result<f64> {
    if k_train == 0 || k_train > k_test {
        return Err(Error::InvalidArgument(format!(
            "openness needs 1 <= k_train <= k_test, got {k_train} and {k_test}"
        )));
    }
    Ok(1.0 - (k_train as f64 / k_test as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub f_score_macro: f64,
    pub overall_accuracy: f64,
    /// `k + 1` entries, the last for unknown; `None` when a class has no
    /// test samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub openness: f64,
    pub n_known: usize,
    pub n_unknown: usize,
    pub tau: f64,
}

impl EvalReport {
    /// Builds a report from scores (higher means more known), thresholded
    /// predictions and 0-based truths where `k` is unknown.
    pub fn compute(
        scores: &[f64],
        preds: &[usize],
        truths: &[usize],
        k: usize,
        k_test: usize,
        tau: f64,
    ) -> Result<Self> {
        if scores.len() != truths.len() {
            return Err(Error::InvalidArgument("one score per test sample required".into()));
        }
        let known: Vec<f64> = scores.iter().zip(truths).filter(|(_, &t)| t < k).map(|(&s, _)| s).collect();
        let unknown: Vec<f64> = scores.iter().zip(truths).filter(|(_, &t)| t == k).map(|(&s, _)| s).collect();
        let stats = class_stats(preds, truths, k + 1)?;
        Ok(EvalReport {
            auroc: auroc(&known, &unknown)?,
            f_score_macro: f_score_macro(preds, truths)?,
            overall_accuracy: accuracy(preds, truths)?,
            per_class_recall: stats.iter().map(ClassStats::recall).collect(),
            openness: openness(k, k_test)?,
            n_known: known.len(),
            n_unknown: unknown.len(),
            tau,
        })
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("auroc,f_score_macro,overall_accuracy,openness,n_known,n_unknown,tau");
        for c in 1..=self.per_class_recall.len() {
            write!(h, ",recall_{c}").unwrap();
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{},{},{}",
            self.auroc,
            self.f_score_macro,
            self.overall_accuracy,
            self.openness,
            self.n_known,
            self.n_unknown,
            self.tau
        );
        for rec in &self.per_class_recall {
            match rec {
                Some(v) => write!(r, ",{v}").unwrap(),
                None => r.push(','),
            }
        }
        r
    }

    pub fn text_block(&self) -> String {
        let mut t = String::new();
        writeln!(t, "AUROC             {:.4}", self.auroc).unwrap();
        writeln!(t, "macro F-score     {:.4}", self.f_score_macro).unwrap();
        writeln!(t, "accuracy          {:.4}", self.overall_accuracy).unwrap();
        writeln!(t, "openness          {:.4}", self.openness).unwrap();
        writeln!(t, "known / unknown   {} / {}", self.n_known, self.n_unknown).unwrap();
        writeln!(t, "tau               {}", self.tau).unwrap();
        let k1 = self.per_class_recall.len();
        for (c, rec) in self.per_class_recall.iter().enumerate() {
            let name = if c + 1 == k1 { "unknown".to_string() } else { format!("class {}", c + 1) };
            match rec {
                Some(v) => writeln!(t, "recall {name:<10} {v:.4}").unwrap(),
                None => writeln!(t, "recall {name:<10} n/a").unwrap(),
            }
        }
        t
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
