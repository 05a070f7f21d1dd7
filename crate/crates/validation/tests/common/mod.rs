use openhybrid::autodiff::Graph;
use openhybrid::flow::FlowStack;
use openhybrid::net::Parameterized;
use openhybrid::optim::Adam;
use openhybrid::Tensor;

/// Full-batch Adam on the flow's bits/dim loss. Returns the loss before each step.
pub fn fit_flow(flow: &mut FlowStack, x: &Tensor, steps: usize, lr: f64) -> Vec<f64> {
    if !flow.is_initialized() {
        flow.initialize(x).unwrap();
    }
    let adam = Adam::default();
    let mut m: Vec<Tensor> = flow.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut v = m.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 1..=steps {
        let mut g = Graph::new();
        let ids = g.bind(flow.parameters(), true);
        let xi = g.constant(x.clone());
        let loss = flow.nll_bits_per_dim_bound(&mut g, &ids, xi).unwrap();
        losses.push(g.value(loss).item());
        let grads = g.backward(loss).unwrap().take_all(&ids);
        for (((p, gr), mi), vi) in flow.parameters_mut().into_iter().zip(&grads).zip(&mut m).zip(&mut v) {
            adam.update(p, gr, mi, vi, step as u64, lr);
        }
    }
    losses
}
