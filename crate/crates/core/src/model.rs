//! The three parameter sets (encoder, classifier, flow) plus optimizer state,
//! and the losses defined over them.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::flow::FlowStack;
use crate::net::{cross_entropy_loss, Activation, Classifier, Encoder, Parameterized};
use crate::tensor::Tensor;

/// Which networks are trained, and how the pieces are wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Encoder shared by classifier and latent flow, trained jointly.
    Joint,
    /// Encoder and classifier trained first, then the latent flow with both frozen.
    PretrainedEncoder,
    /// Encoder and classifier only; unknowns scored by maximum softmax.
    SoftmaxOnly,
    /// Flow on raw features with the classifier on the flow output.
    RawInputFlow,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Joint,
        Regime::PretrainedEncoder,
        Regime::SoftmaxOnly,
        Regime::RawInputFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Joint => "joint",
            Regime::PretrainedEncoder => "pretrained_encoder",
            Regime::SoftmaxOnly => "softmax_only",
            Regime::RawInputFlow => "raw_input_flow",
        }
    }

    pub fn uses_encoder(self) -> bool {
        self != Regime::RawInputFlow
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime {s:?}")))
    }
}

/// Network shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub classifier_hidden: Vec<usize>,
    pub flow_pairs: usize,
    pub flow_hidden: usize,
}

impl Architecture {
    /// `input → 64 → 64 → 16` tanh encoder for low-dimensional points.
    pub fn small(input_dim: usize, classes: usize) -> Self {
        Architecture {
            input_dim,
            classes,
            latent_dim: 16,
            encoder_hidden: vec![64, 64],
            activation: Activation::Tanh,
            classifier_hidden: Vec::new(),
            flow_pairs: 8,
            flow_hidden: 64,
        }
    }

    /// `784 → 256 → 128 → 16` ReLU encoder for flattened 28×28 images.
    pub fn image(input_dim: usize, classes: usize) -> Self {
        Architecture {
            input_dim,
            classes,
            latent_dim: 16,
            encoder_hidden: vec![256, 128],
            activation: Activation::Relu,
            classifier_hidden: Vec::new(),
            flow_pairs: 8,
            flow_hidden: 64,
        }
    }
}

/// Independent random streams so that, e.g., building a flow never shifts
/// the encoder's initial weights.
pub(crate) mod stream {
    pub const ENCODER: u64 = 1;
    pub const CLASSIFIER: u64 = 2;
    pub const FLOW: u64 = 3;
    pub const SHUFFLE: u64 = 4;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-parameter optimizer buffers, one slot per parameter tensor in
/// canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub adam_steps: u64,
}

impl OptimizerState {
    fn for_params(params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimizerState {
            velocity: zeros(),
            adam_m: zeros(),
            adam_v: zeros(),
            adam_steps: 0,
        }
    }
}

/// Index ranges of each network inside the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroups {
    pub encoder: Range<usize>,
    pub classifier: Range<usize>,
    pub flow: Range<usize>,
}

/// Loss graph nodes for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub classification: NodeId,
    pub density: NodeId,
    pub total: NodeId,
}

/// Values of the full objective and its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    /// Cross-entropy in nats.
    pub classification: f64,
    /// Negative log-likelihood in bits per dimension.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub regime: Regime,
    pub arch: Architecture,
    /// Absent for [`Regime::RawInputFlow`].
    pub encoder: Option<Encoder>,
    pub classifier: Classifier,
    pub flow: FlowStack,
    pub optim: OptimizerState,
}

impl ModelParams {
    pub fn new(arch: &Architecture, regime: Regime, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.classes == 0 || arch.latent_dim == 0 {
            return Err(Error::InvalidArgument("architecture dimensions must be positive".into()));
        }
        let (encoder, feature_dim) = if regime.uses_encoder() {
            let enc = Encoder::new(
                &mut rng_for(seed, stream::ENCODER),
                arch.input_dim,
                &arch.encoder_hidden,
                arch.latent_dim,
                arch.activation,
            );
            (Some(enc), arch.latent_dim)
        } else {
            (None, arch.input_dim)
        };
        let classifier = Classifier::new(
            &mut rng_for(seed, stream::CLASSIFIER),
            feature_dim,
            &arch.classifier_hidden,
            arch.classes,
            arch.activation,
        );
        let flow = FlowStack::new(
            &mut rng_for(seed, stream::FLOW),
            feature_dim,
            arch.flow_pairs,
            arch.flow_hidden,
        )?;
        let mut model = ModelParams {
            regime,
            arch: arch.clone(),
            encoder,
            classifier,
            flow,
            optim: OptimizerState {
                velocity: Vec::new(),
                adam_m: Vec::new(),
                adam_v: Vec::new(),
                adam_steps: 0,
            },
        };
        model.optim = OptimizerState::for_params(&model.parameters());
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn groups(&self) -> ParamGroups {
        let ne = self.encoder.as_ref().map_or(0, |e| e.parameter_count());
        let nc = self.classifier.parameter_count();
        let nf = self.flow.parameter_count();
        ParamGroups {
            encoder: 0..ne,
            classifier: ne..ne + nc,
            flow: ne + nc..ne + nc + nf,
        }
    }

    /// Input of both the flow and the classifier: encoder output, or the raw
    /// features when there is no encoder.
    pub fn features_bound(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        match &self.encoder {
            Some(enc) => enc.forward(g, &ids[self.groups().encoder], x),
            None => Ok(x),
        }
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        match &self.encoder {
            Some(enc) => enc.encode(x),
            None => Ok(x.clone()),
        }
    }

    /// Classifier logits. For the raw-input regime the classifier reads the
    /// flow output; otherwise it reads the encoder output.
    pub fn logits_bound(&self, g: &mut Graph, ids: &[NodeId], features: NodeId) -> Result<NodeId> {
        let groups = self.groups();
        let head_input = if self.encoder.is_some() {
            features
        } else {
            self.flow.forward_bound(g, &ids[groups.flow.clone()], features)?.z
        };
        self.classifier.forward(g, &ids[groups.classifier], head_input)
    }

    pub fn classification_loss_bound(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        x: NodeId,
        labels: &[usize],
    ) -> Result<NodeId> {
        let h = self.features_bound(g, ids, x)?;
        let logits = self.logits_bound(g, ids, h)?;
        cross_entropy_loss(g, logits, labels)
    }

    pub fn density_loss_bound(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.features_bound(g, ids, x)?;
        self.flow.nll_bits_per_dim_bound(g, &ids[self.groups().flow], h)
    }

    /// `L_C + λ·L_D` on one graph.
    pub fn full_loss_bound(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        x: NodeId,
        labels: &[usize],
        lambda: f64,
    ) -> Result<LossNodes> {
        let h = self.features_bound(g, ids, x)?;
        let logits = self.logits_bound(g, ids, h)?;
        let classification = cross_entropy_loss(g, logits, labels)?;
        let density = self.flow.nll_bits_per_dim_bound(g, &ids[self.groups().flow], h)?;
        let weighted = g.scale(density, lambda);
        let total = g.add(classification, weighted)?;
        Ok(LossNodes {
            classification,
            density,
            total,
        })
    }

    /// Evaluates the full objective on a batch without training.
    pub fn full_loss(&self, x: &Tensor, labels: &[usize], lambda: f64) -> Result<LossValues> {
        let mut g = Graph::new();
        let ids = g.bind(self.parameters(), false);
        let xi = g.constant(x.clone());
        let nodes = self.full_loss_bound(&mut g, &ids, xi, labels, lambda)?;
        Ok(LossValues {
            total: g.value(nodes.total).item(),
            classification: g.value(nodes.classification).item(),
            density: g.value(nodes.density).item(),
        })
    }

    pub fn classification_loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let ids = g.bind(self.parameters(), false);
        let xi = g.constant(x.clone());
        let loss = self.classification_loss_bound(&mut g, &ids, xi, labels)?;
        Ok(g.value(loss).item())
    }

    /// Overwrites every parameter from a flat list, checking shapes.
    pub fn set_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut slots = self.parameters_mut();
        if slots.len() != values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                values.len()
            )));
        }
        for (i, (slot, value)) in slots.iter_mut().zip(&values).enumerate() {
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
        }
        for (slot, value) in slots.into_iter().zip(values) {
            *slot = value;
        }
        Ok(())
    }

    /// Mutable parameters alongside the optimizer buffers.
    pub fn params_and_optim(&mut self) -> (Vec<&mut Tensor>, &mut OptimizerState) {
        let mut p = self
            .encoder
            .as_mut()
            .map(|e| e.parameters_mut())
            .unwrap_or_default();
        p.extend(self.classifier.parameters_mut());
        p.extend(self.flow.parameters_mut());
        (p, &mut self.optim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, self.parameters())
    }

    /// Builds a model for `arch`/`regime` and fills it from a checkpoint.
    pub fn load(path: &Path, arch: &Architecture, regime: Regime) -> Result<Self> {
        let mut model = ModelParams::new(arch, regime, 0)?;
        model.set_parameters(checkpoint::load(path)?)?;
        model.flow.mark_initialized();
        Ok(model)
    }
}

impl Parameterized for ModelParams {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.as_ref().map(|e| e.parameters()).unwrap_or_default();
        p.extend(self.classifier.parameters());
        p.extend(self.flow.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_and_optim().0
    }
}
