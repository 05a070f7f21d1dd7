//! Encoder and classifier networks, plus the classification loss.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything that owns trainable tensors in a fixed canonical order.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.parameters().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Glorot-uniform `[fan_in, fan_out]` weights.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("volume matches by construction")
}

/// Affine layer `x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: glorot(rng, fan_in, fan_out),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let xw = g.matmul(x, ids[0])?;
        Ok(g.add_row(xw, ids[1])?)
    }
}

/// A stack of dense layers with an activation between layers and none after
/// the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new(rng: &mut impl Rng, widths: &[usize], activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths.windows(2).map(|w| Dense::new(rng, w[0], w[1])).collect();
        Mlp { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn forward(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, &ids[2 * i..2 * i + 2], h)?;
            if i != last {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Evaluates the network outside of any training graph.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let ids = g.bind(self.parameters(), false);
        let xi = g.constant(x.clone());
        let out = self.forward(&mut g, &ids, xi)?;
        Ok(g.value(out).clone())
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn check_input(x: &Tensor, dim: usize, what: &'static str) -> Result<()> {
    if x.rank() != 2 || x.cols() != dim {
        return Err(Error::InvalidArgument(format!(
            "{what} expects [batch, {dim}] input, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Maps raw features to latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub net: Mlp,
}

impl Encoder {
    /// `hidden` are the hidden widths between `input_dim` and `latent_dim`.
    pub fn new(
        rng: &mut impl Rng,
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(latent_dim);
        Encoder {
            net: Mlp::new(rng, &widths, activation),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        self.net.forward(g, ids, x)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.input_dim(), "encode")?;
        let z = self.net.apply(x)?;
        if !z.all_finite() {
            return Err(Error::NonFinite { what: "latent codes" });
        }
        Ok(z)
    }
}

impl Parameterized for Encoder {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

/// Produces one raw logit per known class.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: Mlp,
}

impl Classifier {
    pub fn new(
        rng: &mut impl Rng,
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        Classifier {
            net: Mlp::new(rng, &widths, activation),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(&self, g: &mut Graph, ids: &[NodeId], latent: NodeId) -> Result<NodeId> {
        self.net.forward(g, ids, latent)
    }

    pub fn classify(&self, latent: &Tensor) -> Result<Tensor> {
        check_input(latent, self.input_dim(), "classify")?;
        self.net.apply(latent)
    }
}

impl Parameterized for Classifier {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

/// Mean negative log-softmax probability of the true class. Labels are
/// 0-based.
pub fn cross_entropy_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let classes = g.value(logits).cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let log_p = g.log_softmax(logits)?;
    let picked = g.pick_per_row(log_p, labels)?;
    let mean = g.mean(picked);
    Ok(g.scale(mean, -1.0))
}

/// Row-wise softmax of raw logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    Ok(logits.softmax_rows()?)
}
