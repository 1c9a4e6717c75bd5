use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per parameter, allocated on the first step.
    pub velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(learning_rate) && ok(momentum) && ok(weight_decay)) || momentum >= 1.0 {
            return Err(Error::param(format!(
                "need lr >= 0, 0 <= momentum < 1, weight decay >= 0 (got {learning_rate}, {momentum}, {weight_decay})"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }
}

/// `v ← μ·v + g + λ·p;  p ← p − η·v` for every parameter.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Tensor::zeros(p.dims())).collect::<Result<_>>()?;
    }
    if state.velocity.len() != params.len() {
        return Err(Error::shape("optimizer state belongs to a different parameter list"));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.dims() != g.dims() || p.dims() != v.dims() {
            return Err(Error::shape(format!(
                "parameter {}, gradient {}, velocity {} disagree",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (mu, wd, lr) = (state.momentum, state.weight_decay, state.learning_rate);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
