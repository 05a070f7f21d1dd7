//! Threshold calibration and the k+1-way decision rule.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Regime};
use crate::net::softmax;
use crate::tensor::Tensor;
use crate::trainer::argmax;

/// Rows scored per forward pass.
pub const SCORE_CHUNK: usize = 512;

/// Quantity compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Flow log-likelihood in nats.
    LogLikelihood,
    /// Largest softmax probability.
    MaxSoftmax,
}

impl ScoreKind {
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::SoftmaxOnly => ScoreKind::MaxSoftmax,
            _ => ScoreKind::LogLikelihood,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::LogLikelihood => "log_likelihood",
            ScoreKind::MaxSoftmax => "max_softmax",
        })
    }
}

/// Raw per-sample outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    /// Log-likelihood in nats.
    pub log_prob: Vec<f64>,
    pub logits: Tensor,
    pub softmax: Tensor,
}

impl Scores {
    pub fn len(&self) -> usize {
        self.log_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prob.is_empty()
    }

    pub fn softmax_max(&self, i: usize) -> f64 {
        self.softmax.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn score(&self, i: usize, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::LogLikelihood => self.log_prob[i],
            ScoreKind::MaxSoftmax => self.softmax_max(i),
        }
    }

    pub fn scores(&self, kind: ScoreKind) -> Vec<f64> {
        (0..self.len()).map(|i| self.score(i, kind)).collect()
    }

    /// Closed-set prediction, ignoring any threshold.
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.logits.row(i))
    }
}

fn score_chunk(model: &ModelParams, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let h = model.features(x)?;
    let log_prob = model.flow.log_prob(&h)?.into_data();
    let head_input = if model.encoder.is_some() { h } else { model.flow.forward(&h)?.z };
    let logits = model.classifier.classify(&head_input)?;
    Ok((log_prob, logits))
}

/// Scores every row of `x`. Rows are processed independently, so the result
/// for a row does not depend on what else is in the batch.
pub fn score_batch(model: &ModelParams, x: &Tensor) -> Result<Scores> {
    if x.rank() != 2 {
        return Err(Error::InvalidArgument(format!("expected a [n, m] batch, got {:?}", x.shape())));
    }
    let n = x.rows();
    let k = model.classes();
    let mut log_prob = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n * k);
    let ids: Vec<usize> = (0..n).collect();
    for chunk in ids.chunks(SCORE_CHUNK) {
        let (lp, lg) = score_chunk(model, &x.select_rows(chunk))?;
        log_prob.extend(lp);
        logits.extend(lg.into_data());
    }
    let logits = Tensor::new(vec![n, k], logits)?;
    let softmax = softmax(&logits)?;
    Ok(Scores {
        log_prob,
        logits,
        softmax,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    /// Slack added to the training minimum, in the units of `kind`.
    pub s: f64,
    pub min_train_score: f64,
    pub kind: ScoreKind,
}

impl Threshold {
    pub fn from_scores(train_scores: &[f64], s: f64, kind: ScoreKind) -> Result<Self> {
        if train_scores.is_empty() {
            return Err(Error::InvalidArgument("cannot calibrate on an empty training set".into()));
        }
        if let Some(bad) = train_scores.iter().find(|v| v.is_nan()) {
            return Err(Error::InvalidArgument(format!("training score {bad} is not a number")));
        }
        let min = train_scores.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Threshold {
            tau: min + s,
            s,
            min_train_score: min,
            kind,
        })
    }

    /// Strictly below the threshold means unknown; ties are kept.
    pub fn rejects(&self, score: f64) -> bool {
        score < self.tau
    }
}

pub fn calibrate_threshold(model: &ModelParams, train_x: &Tensor, s: f64, kind: ScoreKind) -> Result<Threshold> {
    if train_x.rows() == 0 {
        return Err(Error::InvalidArgument("cannot calibrate on an empty training set".into()));
    }
    let scores = score_batch(model, train_x)?;
    Threshold::from_scores(&scores.scores(kind), s, kind)
}

/// 0-based class, with `k` meaning unknown.
pub fn decide(scores: &Scores, i: usize, threshold: &Threshold) -> usize {
    if threshold.rejects(scores.score(i, threshold.kind)) {
        scores.logits.cols()
    } else {
        scores.argmax(i)
    }
}

pub fn predict_all(scores: &Scores, threshold: &Threshold) -> Vec<usize> {
    (0..scores.len()).map(|i| decide(scores, i, threshold)).collect()
}

pub fn predict(model: &ModelParams, x: &Tensor, threshold: &Threshold) -> Result<Vec<usize>> {
    Ok(predict_all(&score_batch(model, x)?, threshold))
}

/// Per-sample dump with 1-based labels; `k + 1` is unknown.
pub fn write_score_dump(
    scores: &Scores,
    truths: &[usize],
    threshold: &Threshold,
    sample_ids: &[usize],
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "sample_id,true_label,log_prob_nats,predicted_label,softmax_max")?;
    for i in 0..scores.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            sample_ids[i],
            truths[i] + 1,
            scores.log_prob[i],
            decide(scores, i, threshold) + 1,
            scores.softmax_max(i)
        )?;
    }
    Ok(())
}
