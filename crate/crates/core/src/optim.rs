//! Parameter update rules. Both operate in place on flat buffers so the
//! trainer can keep one state slot per parameter tensor.

use crate::tensor::Tensor;

/// Heavy-ball SGD: `v ← μ·v + g`, `θ ← θ − lr·v`.
pub fn sgd_momentum(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, lr: f64, momentum: f64) {
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected update; `step` is the 1-based step count.
    pub fn update(
        &self,
        param: &mut Tensor,
        grad: &Tensor,
        m: &mut Tensor,
        v: &mut Tensor,
        step: u64,
        lr: f64,
    ) {
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        for (((p, &g), mi), vi) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns whether clipping happened.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> bool {
    let norm = grads.iter().map(Tensor::l2_norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= k;
            }
        }
        true
    } else {
        false
    }
}
