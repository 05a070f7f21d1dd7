//! Invertible density estimator over latent codes.
//!
//! The stack alternates [`ActNorm`] and affine [`Coupling`] layers. Both have
//! triangular Jacobians, so the log-determinant is exact and the inverse is
//! closed-form. The base distribution is a standard normal.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::net::{Activation, Dense, Mlp, Parameterized};
use crate::tensor::Tensor;

/// Per-coordinate floor on the variance used by data-dependent init.
pub const ACTNORM_VARIANCE_FLOOR: f64 = 1e-6;

/// Initial value of the learnable bound on coupling log-scales.
pub const DEFAULT_SCALE_CAP: f64 = 2.0;

/// Per-coordinate affine map `y = x·exp(log_scale) + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub log_scale: Tensor,
    pub shift: Tensor,
    initialized: bool,
}

impl ActNorm {
    /// Unit scale, zero shift; awaiting data-dependent initialization.
    pub fn new(dim: usize) -> Self {
        ActNorm {
            log_scale: Tensor::zeros(&[dim]),
            shift: Tensor::zeros(&[dim]),
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Sets scale and shift so that `x` maps to zero mean, unit variance per
    /// coordinate.
    pub fn initialize_from(&mut self, x: &Tensor) {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return;
        }
        for j in 0..d {
            let mean = (0..n).map(|i| x.get2(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get2(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            let log_scale = -0.5 * var.max(ACTNORM_VARIANCE_FLOOR).ln();
            self.log_scale.data_mut()[j] = log_scale;
            self.shift.data_mut()[j] = -mean * log_scale.exp();
        }
        self.initialized = true;
    }

    fn forward(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<(NodeId, NodeId)> {
        let scale = g.exp(ids[0]);
        let scaled = g.mul_row(x, scale)?;
        let y = g.add_row(scaled, ids[1])?;
        let log_det = g.sum(ids[0]);
        Ok((y, log_det))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let shifted = y.zip_rows(&self.shift, "actnorm_inverse", |a, b| a - b)?;
        Ok(shifted.zip_rows(&self.log_scale, "actnorm_inverse", |a, s| a * (-s).exp())?)
    }
}

impl Parameterized for ActNorm {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.log_scale, &self.shift]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.log_scale, &mut self.shift]
    }
}

/// One tanh hidden layer followed by a zero output layer.
fn conditioner(rng: &mut impl Rng, input: usize, hidden: usize, output: usize) -> Mlp {
    Mlp {
        layers: vec![Dense::new(rng, input, hidden), Dense::zeros(hidden, output)],
        activation: Activation::Tanh,
    }
}

/// Affine coupling: `y_A = x_A`, `y_B = x_B ⊙ exp(s(x_A)) + t(x_A)`.
///
/// `s = cap · tanh(scale_net(x_A))` keeps log-scales bounded by the
/// learnable `cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// Coordinates passed through unchanged and fed to the conditioners.
    pub pass: Vec<usize>,
    /// Coordinates that get scaled and shifted.
    pub transform: Vec<usize>,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
    pub cap: Tensor,
}

impl Coupling {
    /// Builds a coupling whose output layers are zero, so it starts as the
    /// identity map.
    pub fn new(rng: &mut impl Rng, pass: Vec<usize>, transform: Vec<usize>, hidden: usize) -> Self {
        let scale_net = conditioner(rng, pass.len(), hidden, transform.len());
        let shift_net = conditioner(rng, pass.len(), hidden, transform.len());
        Coupling {
            pass,
            transform,
            scale_net,
            shift_net,
            cap: Tensor::vector(vec![DEFAULT_SCALE_CAP]),
        }
    }

    /// Splits `0..dim` into first and second halves; `flip` swaps their roles.
    pub fn halves(dim: usize, flip: bool) -> (Vec<usize>, Vec<usize>) {
        let mid = dim / 2;
        let first: Vec<usize> = (0..mid).collect();
        let second: Vec<usize> = (mid..dim).collect();
        if flip {
            (second, first)
        } else {
            (first, second)
        }
    }

    pub fn dim(&self) -> usize {
        self.pass.len() + self.transform.len()
    }

    fn split_ids<'a>(&self, ids: &'a [NodeId]) -> (&'a [NodeId], &'a [NodeId], NodeId) {
        let ns = self.scale_net.parameter_count();
        let nt = self.shift_net.parameter_count();
        (&ids[..ns], &ids[ns..ns + nt], ids[ns + nt])
    }

    fn forward(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<(NodeId, NodeId)> {
        let (s_ids, t_ids, cap) = self.split_ids(ids);
        let xa = g.select_cols(x, &self.pass)?;
        let xb = g.select_cols(x, &self.transform)?;
        let raw = self.scale_net.forward(g, s_ids, xa)?;
        let bounded = g.tanh(raw);
        let s = g.mul(bounded, cap)?;
        let t = self.shift_net.forward(g, t_ids, xa)?;
        let es = g.exp(s);
        let scaled = g.mul(xb, es)?;
        let yb = g.add(scaled, t)?;
        let y = g.merge_cols(&[(xa, &self.pass), (yb, &self.transform)], self.dim())?;
        let log_det = g.sum_rows(s)?;
        Ok((y, log_det))
    }

    /// Scale and shift produced for the pass-through half `xa`.
    pub fn scale_shift(&self, xa: &Tensor) -> Result<(Tensor, Tensor)> {
        let cap = self.cap.item();
        let s = self.scale_net.apply(xa)?.map(|v| cap * v.tanh());
        let t = self.shift_net.apply(xa)?;
        Ok((s, t))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let ya = y.select_cols(&self.pass)?;
        let yb = y.select_cols(&self.transform)?;
        let (s, t) = self.scale_shift(&ya)?;
        let xb = yb.sub(&t)?.zip_with(&s, "coupling_inverse", |v, si| v * (-si).exp())?;
        let (n, d) = (y.rows(), self.dim());
        let mut out = Tensor::zeros(&[n, d]);
        let data = out.data_mut();
        for i in 0..n {
            for (k, &j) in self.pass.iter().enumerate() {
                data[i * d + j] = ya.row(i)[k];
            }
            for (k, &j) in self.transform.iter().enumerate() {
                data[i * d + j] = xb.row(i)[k];
            }
        }
        Ok(out)
    }
}

impl Parameterized for Coupling {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.scale_net.parameters();
        p.extend(self.shift_net.parameters());
        p.push(&self.cap);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.scale_net.parameters_mut();
        p.extend(self.shift_net.parameters_mut());
        p.push(&mut self.cap);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowLayer {
    ActNorm(ActNorm),
    Coupling(Coupling),
}

impl FlowLayer {
    fn forward(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<(NodeId, NodeId)> {
        match self {
            FlowLayer::ActNorm(a) => a.forward(g, ids, x),
            FlowLayer::Coupling(c) => c.forward(g, ids, x),
        }
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        match self {
            FlowLayer::ActNorm(a) => a.inverse(y),
            FlowLayer::Coupling(c) => c.inverse(y),
        }
    }
}

impl Parameterized for FlowLayer {
    fn parameters(&self) -> Vec<&Tensor> {
        match self {
            FlowLayer::ActNorm(a) => a.parameters(),
            FlowLayer::Coupling(c) => c.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            FlowLayer::ActNorm(a) => a.parameters_mut(),
            FlowLayer::Coupling(c) => c.parameters_mut(),
        }
    }
}

/// Latent output of the flow and the accumulated log-determinant (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub z: Tensor,
    pub log_det: Tensor,
}

/// Graph nodes produced by a bound forward pass.
#[derive(Debug, Clone, Copy)]
pub struct FlowNodes {
    pub z: NodeId,
    pub log_det: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    dim: usize,
    pub layers: Vec<FlowLayer>,
}

impl FlowStack {
    /// `pairs` (ActNorm, Coupling) blocks with alternating halves.
    pub fn new(rng: &mut impl Rng, dim: usize, pairs: usize, hidden: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "coupling flows need at least 2 dimensions, got {dim}"
            )));
        }
        let mut layers = Vec::with_capacity(2 * pairs);
        for p in 0..pairs {
            layers.push(FlowLayer::ActNorm(ActNorm::new(dim)));
            let (pass, transform) = Coupling::halves(dim, p % 2 == 1);
            layers.push(FlowLayer::Coupling(Coupling::new(rng, pass, transform, hidden)));
        }
        Ok(FlowStack { dim, layers })
    }

    /// Assembles a stack from explicit layers, checking their dimensions.
    pub fn from_layers(dim: usize, layers: Vec<FlowLayer>) -> Result<Self> {
        for layer in &layers {
            let d = match layer {
                FlowLayer::ActNorm(a) => a.log_scale.len(),
                FlowLayer::Coupling(c) => c.dim(),
            };
            if d != dim {
                return Err(Error::InvalidArgument(format!(
                    "flow layer of dimension {d} in a {dim}-dimensional stack"
                )));
            }
        }
        Ok(FlowStack { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| match l {
            FlowLayer::ActNorm(a) => a.initialized,
            FlowLayer::Coupling(_) => true,
        })
    }

    /// Marks every ActNorm as initialized, e.g. after loading trained values.
    pub fn mark_initialized(&mut self) {
        for layer in &mut self.layers {
            if let FlowLayer::ActNorm(a) = layer {
                a.initialized = true;
            }
        }
    }

    /// Data-dependent initialization of every not-yet-initialized ActNorm,
    /// pushing `x` through the stack layer by layer.
    pub fn initialize(&mut self, x: &Tensor) -> Result<()> {
        self.check_dim(x)?;
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            if let FlowLayer::ActNorm(a) = &mut self.layers[i] {
                if !a.initialized {
                    a.initialize_from(&h);
                }
            }
            h = self.layer_forward(i, &h)?;
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let layer = &self.layers[i];
        let mut g = Graph::new();
        let ids = g.bind(layer.parameters(), false);
        let xi = g.constant(x.clone());
        let (y, _) = layer.forward(&mut g, &ids, xi)?;
        Ok(g.value(y).clone())
    }

    fn check_dim(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "flow expects [batch, {}] input, got {:?}",
                self.dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g`; `ids` are bound to [`Self::parameters`].
    pub fn forward_bound(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<FlowNodes> {
        let rows = g.value(x).rows();
        let mut log_det = g.constant(Tensor::zeros(&[rows]));
        let mut h = x;
        let mut offset = 0;
        for layer in &self.layers {
            let n = layer.parameter_count();
            let (y, ld) = layer.forward(g, &ids[offset..offset + n], h)?;
            log_det = g.add(log_det, ld)?;
            h = y;
            offset += n;
        }
        Ok(FlowNodes { z: h, log_det })
    }

    /// Per-row `log N(z; 0, I) + log_det` in nats.
    pub fn log_prob_bound(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let FlowNodes { z, log_det } = self.forward_bound(g, ids, x)?;
        let sq = g.mul(z, z)?;
        let ss = g.sum_rows(sq)?;
        let half = g.scale(ss, -0.5);
        let base = g.add_const(half, -0.5 * self.dim as f64 * (2.0 * PI).ln())?;
        Ok(g.add(base, log_det)?)
    }

    /// Mean negative log-likelihood in bits per dimension.
    pub fn nll_bits_per_dim_bound(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        x: NodeId,
    ) -> Result<NodeId> {
        if g.value(x).rows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let lp = self.log_prob_bound(g, ids, x)?;
        let mean = g.mean(lp);
        Ok(g.scale(mean, -1.0 / (self.dim as f64 * LN_2)))
    }

    pub fn forward(&self, x: &Tensor) -> Result<FlowResult> {
        self.check_dim(x)?;
        let mut g = Graph::new();
        let ids = g.bind(self.parameters(), false);
        let xi = g.constant(x.clone());
        let nodes = self.forward_bound(&mut g, &ids, xi)?;
        let z = g.value(nodes.z).clone();
        let log_det = g.value(nodes.log_det).clone();
        if !z.all_finite() || !log_det.all_finite() {
            return Err(Error::NonFinite { what: "flow forward" });
        }
        Ok(FlowResult { z, log_det })
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        self.check_dim(z)?;
        let mut h = z.clone();
        for layer in self.layers.iter().rev() {
            h = layer.inverse(&h)?;
        }
        if !h.all_finite() {
            return Err(Error::NonFinite { what: "flow inverse" });
        }
        Ok(h)
    }

    pub fn log_prob(&self, x: &Tensor) -> Result<Tensor> {
        self.check_dim(x)?;
        let mut g = Graph::new();
        let ids = g.bind(self.parameters(), false);
        let xi = g.constant(x.clone());
        let lp = self.log_prob_bound(&mut g, &ids, xi)?;
        let out = g.value(lp).clone();
        if !out.all_finite() {
            return Err(Error::NonFinite { what: "log-likelihood" });
        }
        Ok(out)
    }

    pub fn nll_bits_per_dim(&self, x: &Tensor) -> Result<f64> {
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let lp = self.log_prob(x)?;
        Ok(-lp.sum() / lp.len() as f64 / (self.dim as f64 * LN_2))
    }

    /// Draws `n` base-distribution samples and maps them through the inverse.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z = Tensor::new(vec![n, self.dim], data)?;
        self.inverse(&z)
    }
}

impl Parameterized for FlowStack {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Tensor {
        let data = (0..n * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    fn perturb(flow: &mut FlowStack, rng: &mut ChaCha8Rng, scale: f64) {
        for p in flow.parameters_mut() {
            for v in p.data_mut() {
                *v += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    #[test]
    fn fresh_stack_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flow = FlowStack::new(&mut rng, 4, 3, 8).unwrap();
        let x = random_points(&mut rng, 5, 4, 1.0);
        let out = flow.forward(&x).unwrap();
        assert_eq!(out.z, x);
        assert!(out.log_det.data().iter().all(|&v| v == 0.0));
        assert_eq!(flow.inverse(&x).unwrap(), x);
    }

    #[test]
    fn constant_scale_and_shift_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Coupling::new(&mut rng, vec![0, 1], vec![2, 3], 4);
        // Zero output weights make s and t depend only on output biases.
        let b_s = (LN_2 / DEFAULT_SCALE_CAP).atanh();
        c.scale_net.layers[1].bias = Tensor::vector(vec![b_s, b_s]);
        c.shift_net.layers[1].bias = Tensor::vector(vec![1.0, 1.0]);
        let flow = FlowStack::from_layers(4, vec![FlowLayer::Coupling(c)]).unwrap();
        let x = Tensor::from_rows(&[vec![0.4, -2.0, 3.0, 3.0]]).unwrap();
        let out = flow.forward(&x).unwrap();
        assert_eq!(&out.z.data()[..2], &[0.4, -2.0]);
        assert!((out.z.data()[2] - 7.0).abs() < 1e-12);
        assert!((out.z.data()[3] - 7.0).abs() < 1e-12);
        assert!((out.log_det.item() - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_at_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flow = FlowStack::new(&mut rng, 2, 2, 4).unwrap();
        let lp = flow.log_prob(&Tensor::zeros(&[1, 2])).unwrap();
        assert!((lp.item() - (-(2.0 * PI).ln())).abs() < 1e-12);
        assert!((lp.item() + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn one_dimensional_doubling() {
        let mut act = ActNorm::new(1);
        act.log_scale = Tensor::vector(vec![LN_2]);
        let flow = FlowStack::from_layers(1, vec![FlowLayer::ActNorm(act)]).unwrap();
        for x in [-1.5, 0.0, 0.3, 2.0] {
            let lp = flow.log_prob(&Tensor::from_rows(&[vec![x]]).unwrap()).unwrap();
            let y = 2.0 * x;
            let expected = -0.5 * y * y - 0.5 * (2.0 * PI).ln() + LN_2;
            assert!((lp.item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bits_per_dim_unit_conversion() {
        // Mean NLL of 2·ln 2 nats over 2 dimensions is exactly 1 bit/dim.
        let mut act = ActNorm::new(2);
        // Choose a log-scale so that log p(0) = −2 ln 2.
        let target = -2.0 * LN_2;
        let c = (target + (2.0 * PI).ln()) / 2.0;
        act.log_scale = Tensor::vector(vec![c, c]);
        let flow = FlowStack::from_layers(2, vec![FlowLayer::ActNorm(act)]).unwrap();
        let bpd = flow.nll_bits_per_dim(&Tensor::zeros(&[3, 2])).unwrap();
        assert!((bpd - 1.0).abs() < 1e-12);
        assert!((2.0 * LN_2 - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let flow = FlowStack::new(&mut ChaCha8Rng::seed_from_u64(0), 2, 1, 4).unwrap();
        assert!(flow.nll_bits_per_dim(&Tensor::zeros(&[0, 2])).is_err());
    }

    #[test]
    fn identity_flow_entropy_of_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flow = FlowStack::new(&mut rng, 2, 2, 4).unwrap();
        let x = random_points(&mut rng, 10_000, 2, 1.0);
        let bpd = flow.nll_bits_per_dim(&x).unwrap();
        let expected = (0.5 * (2.0 * PI).ln() + 0.5) / LN_2;
        assert!((bpd - expected).abs() < 0.1, "bpd {bpd} vs {expected}");
        assert!((expected - 2.05).abs() < 0.01);
    }

    #[test]
    fn round_trip_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut flow = FlowStack::new(&mut rng, 6, 4, 8).unwrap();
        perturb(&mut flow, &mut rng, 0.3);
        let x = random_points(&mut rng, 1000, 6, 1.5);
        let back = flow.inverse(&flow.forward(&x).unwrap().z).unwrap();
        let err = x.sub(&back).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9, "round-trip error {err}");
        let z = random_points(&mut rng, 1000, 6, 1.0);
        let fwd = flow.forward(&flow.inverse(&z).unwrap()).unwrap().z;
        let err = z.sub(&fwd).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9, "inverse round-trip error {err}");
    }

    #[test]
    fn actnorm_initialization_whitens_first_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut flow = FlowStack::new(&mut rng, 3, 2, 4).unwrap();
        let mut x = random_points(&mut rng, 200, 3, 4.0);
        for v in x.data_mut() {
            *v += 7.0;
        }
        flow.initialize(&x).unwrap();
        assert!(flow.is_initialized());
        let FlowLayer::ActNorm(first) = &flow.layers[0] else { unreachable!() };
        let g = {
            let mut g = Graph::new();
            let ids = g.bind(first.parameters(), false);
            let xi = g.constant(x.clone());
            let (y, _) = first.forward(&mut g, &ids, xi).unwrap();
            g.value(y).clone()
        };
        for j in 0..3 {
            let col: Vec<f64> = (0..200).map(|i| g.get2(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 200.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_batch_hits_variance_floor() {
        let mut act = ActNorm::new(2);
        act.initialize_from(&Tensor::full(&[4, 2], 3.0));
        let expected = -0.5 * ACTNORM_VARIANCE_FLOOR.ln();
        assert!(act.log_scale.data().iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn sample_edge_cases() {
        let flow = FlowStack::new(&mut ChaCha8Rng::seed_from_u64(6), 3, 2, 4).unwrap();
        assert_eq!(flow.sample(0, 1).unwrap().shape(), &[0, 3]);
        assert_eq!(flow.sample(50, 9).unwrap(), flow.sample(50, 9).unwrap());
        assert_ne!(flow.sample(50, 9).unwrap(), flow.sample(50, 10).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let flow = FlowStack::new(&mut ChaCha8Rng::seed_from_u64(0), 4, 1, 4).unwrap();
        assert!(flow.forward(&Tensor::zeros(&[2, 3])).is_err());
        assert!(flow.inverse(&Tensor::zeros(&[2, 5])).is_err());
        assert!(FlowStack::new(&mut ChaCha8Rng::seed_from_u64(0), 1, 1, 4).is_err());
    }
}
