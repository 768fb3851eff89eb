use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor, TensorError};

/// Updates a list of parameter tensors from their gradient buffers.
pub trait Optimizer {
    /// Applies one update in place on raw values. `index` identifies the
    /// parameter across calls.
    fn update(&mut self, index: usize, theta: &mut [f64], grad: &[f64]);

    /// Called once per step before any `update`.
    fn begin_step(&mut self) {}

    /// Replaces every tensor with its updated value, reading gradients from
    /// the tensors' own buffers. Missing gradients count as zero.
    fn step<S: Scalar>(&mut self, params: &mut [&mut Tensor<S>]) -> Result<(), TensorError>
    where
        Self: Sized,
    {
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.numel()],
            })
            .collect();
        self.step_with(params, &grads)
    }

    /// As [`Optimizer::step`] with externally accumulated gradients.
    fn step_with<S: Scalar>(&mut self, params: &mut [&mut Tensor<S>], grads: &[Vec<f64>]) -> Result<(), TensorError>
    where
        Self: Sized,
    {
        self.begin_step();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.len() != p.numel() {
                return Err(TensorError::Shape {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let mut theta: Vec<f64> = p.data().iter().map(|v| v.as_f64()).collect();
            self.update(i, &mut theta, g);
            **p = Tensor::variable(p.shape(), theta.into_iter().map(S::from_f64_lossy).collect())?;
        }
        Ok(())
    }
}

fn buffer(buffers: &mut Vec<Vec<f64>>, index: usize, len: usize) -> &mut Vec<f64> {
    if buffers.len() <= index {
        buffers.resize_with(index + 1, Vec::new);
    }
    let b = &mut buffers[index];
    if b.len() != len {
        *b = vec![0.0; len];
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub params: AdamParams,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: AdamParams) -> Self {
        Self {
            params,
            ..Default::default()
        }
    }
}

impl Optimizer for AdamState {
    fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update(&mut self, index: usize, theta: &mut [f64], grad: &[f64]) {
        let AdamParams { lr, beta1, beta2, epsilon } = self.params;
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let m = buffer(&mut self.m, index, theta.len());
        for (mi, g) in m.iter_mut().zip(grad) {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
        }
        let v = buffer(&mut self.v, index, theta.len());
        for (vi, g) in v.iter_mut().zip(grad) {
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        }
        let (m, v) = (&self.m[index], &self.v[index]);
        for ((th, mi), vi) in theta.iter_mut().zip(m).zip(v) {
            *th -= lr * (mi / c1) / ((vi / c2).sqrt() + epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self { lr: 1e-2, momentum: 0.9 }
    }
}

/// SGD with Nesterov momentum in the look-ahead-free form: with
/// `v <- mu v - lr g`, the stored parameters move by `mu v - lr g`, which
/// keeps them at the look-ahead point of the classical formulation.
#[derive(Debug, Clone, Default)]
pub struct NesterovSgdState {
    pub params: SgdParams,
    velocity: Vec<Vec<f64>>,
}

impl NesterovSgdState {
    pub fn new(params: SgdParams) -> Self {
        Self {
            params,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for NesterovSgdState {
    fn update(&mut self, index: usize, theta: &mut [f64], grad: &[f64]) {
        let SgdParams { lr, momentum: mu } = self.params;
        let v = buffer(&mut self.velocity, index, theta.len());
        for ((th, vi), g) in theta.iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = mu * *vi - lr * g;
            *th += mu * *vi - lr * g;
        }
    }
}
