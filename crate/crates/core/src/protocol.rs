//! Repeated train/evaluate runs over random known/unknown class partitions.

use rayon::prelude::*;

use crate::data::{partition, LabeledDataset, PartitionSpec, Split};
use crate::error::{Error, Result};
use crate::inference::{calibrate_threshold, predict_all, score_batch, ScoreKind, Scores, Threshold};
use crate::metrics::{mean_std, EvalReport};
use crate::model::{Architecture, ModelParams, Regime};
use crate::trainer::{fit, EpochLog, TrainConfig};

/// Everything needed to score a trained model on one partition.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub threshold: Threshold,
    pub train_scores: Scores,
    pub test_scores: Scores,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    /// Fraction of unknown test samples scoring at or above `tau`, i.e. accepted as known.
    pub fn overlap(&self, test: &Split, k: usize) -> f64 {
        let kind = self.threshold.kind;
        let unknown: Vec<f64> = (0..test.len())
            .filter(|&i| test.labels[i] == k)
            .map(|i| self.test_scores.score(i, kind))
            .collect();
        if unknown.is_empty() {
            return 0.0;
        }
        unknown.iter().filter(|&&v| !self.threshold.rejects(v)).count() as f64 / unknown.len() as f64
    }
}

pub fn evaluate(model: &ModelParams, train: &Split, test: &Split, spec: &PartitionSpec, s: f64) -> Result<Evaluation> {
    let kind = ScoreKind::for_regime(model.regime);
    let threshold = calibrate_threshold(model, &train.features, s, kind)?;
    let train_scores = score_batch(model, &train.features)?;
    let test_scores = score_batch(model, &test.features)?;
    let predictions = predict_all(&test_scores, &threshold);
    let k = spec.k();
    let report = EvalReport::compute(
        &test_scores.scores(kind),
        &predictions,
        &test.labels,
        k,
        k + spec.unknown_classes.len(),
        threshold.tau,
    )?;
    Ok(Evaluation {
        report,
        threshold,
        train_scores,
        test_scores,
        predictions,
    })
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub k_known: usize,
    /// One partition per seed. The seed drives the class split, the weight
    /// initialization and the batch order.
    pub seeds: Vec<u64>,
    /// Shape template; `classes` is overwritten with `k_known`.
    pub arch: Architecture,
    pub train: TrainConfig,
    pub s: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionRun {
    pub seed: u64,
    pub spec: PartitionSpec,
    pub train: Split,
    pub test: Split,
    pub model: ModelParams,
    pub logs: Vec<EpochLog>,
    pub evaluation: Evaluation,
}

pub fn run_partition(dataset: &LabeledDataset, protocol: &Protocol, seed: u64) -> Result<PartitionRun> {
    let (train, test, spec) = partition(dataset, protocol.k_known, seed)?;
    let arch = Architecture {
        input_dim: dataset.feature_dim(),
        classes: spec.k(),
        ..protocol.arch.clone()
    };
    let cfg = TrainConfig {
        seed,
        ..protocol.train.clone()
    };
    let mut model = ModelParams::new(&arch, cfg.regime, seed)?;
    let logs = fit(&mut model, &train.features, &train.labels, &cfg)?;
    let evaluation = evaluate(&model, &train, &test, &spec, protocol.s)?;
    Ok(PartitionRun {
        seed,
        spec,
        train,
        test,
        model,
        logs,
        evaluation,
    })
}

/// Mean and population standard deviation of each headline metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub regime: Regime,
    pub auroc: (f64, f64),
    pub f_score_macro: (f64, f64),
    pub overall_accuracy: (f64, f64),
    pub openness: (f64, f64),
    pub reports: Vec<EvalReport>,
}

impl Aggregate {
    pub fn from_reports(regime: Regime, reports: Vec<EvalReport>) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no partitions to aggregate".into()));
        }
        let stat = |f: fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
        Ok(Aggregate {
            regime,
            auroc: stat(|r| r.auroc),
            f_score_macro: stat(|r| r.f_score_macro),
            overall_accuracy: stat(|r| r.overall_accuracy),
            openness: stat(|r| r.openness),
            reports,
        })
    }
}

/// Runs every partition of `protocol`, at most `threads` at a time.
/// Results are in seed order regardless of scheduling.
pub fn run_partitions(dataset: &LabeledDataset, protocol: &Protocol, threads: usize) -> Result<(Aggregate, Vec<PartitionRun>)> {
    if protocol.k_known >= dataset.class_count {
        return Err(Error::InvalidArgument(format!(
            "k_known = {} leaves no unknown classes among {}",
            protocol.k_known, dataset.class_count
        )));
    }
    if protocol.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one partition seed is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Vec<PartitionRun> = pool.install(|| {
        protocol
            .seeds
            .par_iter()
            .map(|&seed| run_partition(dataset, protocol, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let reports = runs.iter().map(|r| r.evaluation.report.clone()).collect();
    Ok((Aggregate::from_reports(protocol.train.regime, reports)?, runs))
}
