use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F = f32> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn for_params(params: &[Tensor<F>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<F: Scalar>(
    params: &mut [Tensor<F>],
    grads: &[&[F]],
    state: &mut AdamState<F>,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if grads[i].len() != p.len() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} has {} values", p.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::from_f64_lossy(hyper.beta1);
    let b2 = F::from_f64_lossy(hyper.beta2);
    let one = F::one();
    let c1 = F::from_f64_lossy(1.0 - hyper.beta1.powi(t));
    let c2 = F::from_f64_lossy(1.0 - hyper.beta2.powi(t));
    let lr = F::from_f64_lossy(hyper.lr);
    let eps = F::from_f64_lossy(hyper.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(grads[i]).zip(m).zip(v) {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam optimizer bundling hyperparameters with state.
#[derive(Clone, Debug)]
pub struct Adam<F = f32> {
    pub hyper: AdamHyper,
    pub state: AdamState<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(hyper: AdamHyper, params: &[Tensor<F>]) -> Self {
        Self {
            hyper,
            state: AdamState::for_params(params),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[&[F]]) -> Result<()> {
        adam_step(params, grads, &mut self.state, &self.hyper)
    }
}
