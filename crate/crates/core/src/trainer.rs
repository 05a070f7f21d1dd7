//! Alternating optimization: a momentum-SGD step on the classification loss,
//! then an Adam step on the weighted density loss, on every batch.

use std::io::Write;
use std::ops::Range;

use log::{debug, info};
use rand::seq::SliceRandom;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::{rng_for, stream, ModelParams, Regime};
use crate::net::Parameterized;
use crate::optim::{clip_global_norm, sgd_momentum, Adam};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the density loss.
    pub lambda: f64,
    /// Epochs per phase.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_flow: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub regime: Regime,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            epochs: 40,
            batch_size: 64,
            lr_classifier: 1e-2,
            lr_flow: 1e-3,
            momentum: 0.9,
            clip_norm: 10.0,
            seed: 0,
            regime: Regime::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr_classifier > 0.0 && self.lr_flow > 0.0) {
            return bad(format!(
                "learning rates must be > 0, got {} and {}",
                self.lr_classifier, self.lr_flow
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// Which updates a step performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// The regime's main schedule. For the pretrained regime this is the
    /// classifier-only first phase.
    Main,
    /// Flow-only training with encoder and classifier frozen.
    FlowOnly,
}

/// Loss values seen by one step, measured before the respective update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    /// Cross-entropy in nats; NaN when the step has no classifier update.
    pub l_c: f64,
    /// Density loss in bits/dim; NaN when the step has no flow update.
    pub l_d: f64,
    pub clipped: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub phase: u32,
    pub epoch: usize,
    pub l_c: f64,
    pub l_d: f64,
    pub total: f64,
    pub clip_events: u32,
}

fn bind_selected(g: &mut Graph, model: &ModelParams, trainable: &[Range<usize>]) -> Vec<NodeId> {
    model
        .parameters()
        .into_iter()
        .enumerate()
        .map(|(i, p)| g.leaf(p.clone(), trainable.iter().any(|r| r.contains(&i))))
        .collect()
}

fn selected_indices(trainable: &[Range<usize>]) -> Vec<usize> {
    trainable.iter().flat_map(|r| r.clone()).collect()
}

fn sgd_substep(
    model: &mut ModelParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    trainable: &[Range<usize>],
) -> Result<(f64, bool)> {
    let mut g = Graph::new();
    let ids = bind_selected(&mut g, model, trainable);
    let xi = g.constant(x.clone());
    let loss = model.classification_loss_bound(&mut g, &ids, xi, labels)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "classification loss" });
    }
    let idx = selected_indices(trainable);
    let node_ids: Vec<NodeId> = idx.iter().map(|&i| ids[i]).collect();
    let mut grads = g.backward(loss)?.take_all(&node_ids);
    let clipped = clip_global_norm(&mut grads, cfg.clip_norm);
    let (mut params, optim) = model.params_and_optim();
    for (&i, grad) in idx.iter().zip(&grads) {
        sgd_momentum(params[i], grad, &mut optim.velocity[i], cfg.lr_classifier, cfg.momentum);
    }
    Ok((value, clipped))
}

fn adam_substep(
    model: &mut ModelParams,
    x: &Tensor,
    weight: f64,
    cfg: &TrainConfig,
    trainable: &[Range<usize>],
) -> Result<(f64, bool)> {
    let mut g = Graph::new();
    let ids = bind_selected(&mut g, model, trainable);
    let xi = g.constant(x.clone());
    let l_d = model.density_loss_bound(&mut g, &ids, xi)?;
    let value = g.value(l_d).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "density loss" });
    }
    let weighted = g.scale(l_d, weight);
    let idx = selected_indices(trainable);
    let node_ids: Vec<NodeId> = idx.iter().map(|&i| ids[i]).collect();
    let mut grads = g.backward(weighted)?.take_all(&node_ids);
    let clipped = clip_global_norm(&mut grads, cfg.clip_norm);
    let (mut params, optim) = model.params_and_optim();
    optim.adam_steps += 1;
    let adam = Adam::default();
    for (&i, grad) in idx.iter().zip(&grads) {
        adam.update(params[i], grad, &mut optim.adam_m[i], &mut optim.adam_v[i], optim.adam_steps, cfg.lr_flow);
    }
    Ok((value, clipped))
}

/// Parameter index ranges updated together in one sub-step.
type Selection = Vec<Range<usize>>;

/// One alternating update on a single batch.
///
/// Joint: SGD on encoder and classifier with `L_C`, then Adam on encoder
/// and flow with `λ·L_D`. Raw-input flow: SGD on classifier and flow with
/// `L_C`, then Adam on the flow with `λ·L_D`. Softmax-only and the first
/// pretrained phase run the SGD sub-step alone; [`Phase::FlowOnly`] runs an
/// Adam step on the flow with `L_D`.
pub fn train_step(
    model: &mut ModelParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<StepLog> {
    let groups = model.groups();
    let mut log = StepLog {
        l_c: f64::NAN,
        l_d: f64::NAN,
        clipped: 0,
    };
    let (sgd, adam): (Option<Selection>, Option<(Selection, f64)>) =
        match (model.regime, phase) {
            (_, Phase::FlowOnly) => (None, Some((vec![groups.flow], 1.0))),
            (Regime::Joint, Phase::Main) => (
                Some(vec![groups.encoder.clone(), groups.classifier]),
                Some((vec![groups.encoder, groups.flow], cfg.lambda)),
            ),
            (Regime::RawInputFlow, Phase::Main) => (
                Some(vec![groups.classifier, groups.flow.clone()]),
                Some((vec![groups.flow], cfg.lambda)),
            ),
            (Regime::SoftmaxOnly | Regime::PretrainedEncoder, Phase::Main) => {
                (Some(vec![groups.encoder, groups.classifier]), None)
            }
        };
    if let Some(trainable) = sgd {
        let (l_c, clipped) = sgd_substep(model, x, labels, cfg, &trainable)?;
        log.l_c = l_c;
        log.clipped += u32::from(clipped);
    }
    if let Some((trainable, weight)) = adam {
        let (l_d, clipped) = adam_substep(model, x, weight, cfg, &trainable)?;
        log.l_d = l_d;
        log.clipped += u32::from(clipped);
    }
    Ok(log)
}

pub fn fit(model: &mut ModelParams, x: &Tensor, labels: &[usize], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if model.regime != cfg.regime {
        return Err(Error::InvalidArgument(format!(
            "model built for {} but config asks for {}",
            model.regime, cfg.regime
        )));
    }
    let n = labels.len();
    if n == 0 || x.rank() != 2 || x.rows() != n {
        return Err(Error::InvalidArgument(format!(
            "need a nonempty batch with one label per row, got {n} labels for {:?}",
            x.shape()
        )));
    }
    let k = model.classes();
    let mut present = vec![false; k];
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        present[y] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidArgument(format!("class {missing} has no training samples")));
    }

    let mut rng = rng_for(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let phases: &[(u32, Phase)] = match cfg.regime {
        Regime::PretrainedEncoder => &[(1, Phase::Main), (2, Phase::FlowOnly)],
        _ => &[(1, Phase::Main)],
    };
    let uses_flow = |phase: Phase| match (cfg.regime, phase) {
        (_, Phase::FlowOnly) => true,
        (Regime::SoftmaxOnly | Regime::PretrainedEncoder, Phase::Main) => false,
        _ => true,
    };

    let mut logs = Vec::new();
    for &(phase_no, phase) in phases {
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            if uses_flow(phase) && !model.flow.is_initialized() {
                // Data-dependent ActNorm init on the first batch the flow sees.
                let first = &order[..cfg.batch_size.min(n)];
                let h = model.features(&x.select_rows(first))?;
                model.flow.initialize(&h)?;
            }
            let (mut sum_c, mut sum_d, mut clips) = (0.0, 0.0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let xb = x.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let step = train_step(model, &xb, &yb, cfg, phase).map_err(|e| match e {
                    Error::NonFinite { what } => Error::Diverged {
                        phase: phase_no,
                        epoch,
                        component: what,
                    },
                    other => other,
                })?;
                let w = chunk.len() as f64 / n as f64;
                sum_c += w * step.l_c;
                sum_d += w * step.l_d;
                clips += step.clipped;
            }
            if clips > 0 {
                debug!("phase {phase_no} epoch {epoch}: gradient clipped in {clips} sub-steps");
            }
            let total = match (sum_c.is_nan(), sum_d.is_nan()) {
                (false, false) => sum_c + cfg.lambda * sum_d,
                (false, true) => sum_c,
                (true, _) => sum_d,
            };
            info!("phase {phase_no} epoch {epoch}: L_C={sum_c:.5} L_D={sum_d:.5} bits/dim");
            logs.push(EpochLog {
                phase: phase_no,
                epoch,
                l_c: sum_c,
                l_d: sum_d,
                total,
                clip_events: clips,
            });
        }
    }
    Ok(logs)
}

/// Loss log CSV. A leading `phase` column is added when more than one phase ran.
pub fn write_loss_log(logs: &[EpochLog], mut out: impl Write) -> Result<()> {
    let phased = logs.iter().any(|l| l.phase != 1);
    if phased {
        write!(out, "phase,")?;
    }
    writeln!(out, "epoch,L_C,L_D_bits_per_dim,total")?;
    for l in logs {
        if phased {
            write!(out, "{},", l.phase)?;
        }
        writeln!(out, "{},{},{},{}", l.epoch, l.l_c, l.l_d, l.total)?;
    }
    Ok(())
}

/// Fraction of rows whose classifier argmax equals the label.
pub fn accuracy(model: &ModelParams, x: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty set".into()));
    }
    let h = model.features(x)?;
    let head_input = if model.encoder.is_some() {
        h
    } else {
        model.flow.forward(&h)?.z
    };
    let logits = model.classifier.classify(&head_input)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
