//! Sequence layers on `[batch, channels, time]` tensors. Every layer maps a
//! time extent `T` to the same `T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LayerError>;

/// Whether dropout is active for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are drawn from a generator seeded with `seed`.
    Train { seed: u64 },
    Eval,
}

/// Named parameter access, used by optimisers and checkpoints.
pub trait Parameters<S: Scalar> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)>;
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn prefixed<'a, S: Scalar>(prefix: &str, items: Vec<(String, &'a Tensor<S>)>) -> Vec<(String, &'a Tensor<S>)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a, S: Scalar>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor<S>)>,
) -> Vec<(String, &'a mut Tensor<S>)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Uniform fan-in scaled initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
fn he_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64_lossy(rng.random_range(-bound..bound))).collect();
    Tensor::variable(shape, data).expect("shape matches data")
}

fn zeros_var<S: Scalar>(shape: &[usize]) -> Tensor<S> {
    Tensor::variable(shape, vec![S::zero(); shape.iter().product()]).expect("shape matches data")
}

/// Non-causal dilated 1-D convolution with length-preserving zero padding.
#[derive(Debug, Clone)]
pub struct DilatedConv1d<S: Scalar> {
    pub kernel_size: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> DilatedConv1d<S> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(LayerError::Config(format!("kernel size must be odd, got {kernel_size}")));
        }
        if dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(LayerError::Config(format!(
                "dilation and channel counts must be positive (d={dilation}, in={in_channels}, out={out_channels})"
            )));
        }
        Ok(Self {
            kernel_size,
            dilation,
            in_channels,
            out_channels,
            weight: he_uniform(&[out_channels, in_channels, kernel_size], in_channels * kernel_size, rng),
            bias: zeros_var(&[out_channels]),
        })
    }

    /// Zero samples added to each end of the input.
    pub fn padding(&self) -> usize {
        padding(self.kernel_size, self.dilation)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().len() != 3 || x.shape()[1] != self.in_channels {
            return Err(TensorError::Shape {
                op: "dilated_conv",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            }
            .into());
        }
        Ok(x.conv1d(&self.weight, &self.bias, self.dilation)?)
    }
}

/// Symmetric zero padding per side for kernel `k` and dilation `d`.
pub fn padding(kernel_size: usize, dilation: usize) -> usize {
    (kernel_size - 1) * dilation / 2
}

impl<S: Scalar> Parameters<S> for DilatedConv1d<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Affine map applied independently at every time step.
#[derive(Debug, Clone)]
pub struct PositionwiseDense<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> PositionwiseDense<S> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(LayerError::Config("dense layer widths must be positive".into()));
        }
        Ok(Self {
            weight: he_uniform(&[out_features, in_features], in_features, rng),
            bias: zeros_var(&[out_features]),
        })
    }

    pub fn from_parts(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            (&[o, _], &[ob]) if o == ob => Ok(Self { weight, bias }),
            _ => Err(TensorError::Shape {
                op: "dense",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            }
            .into()),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (out, inp) = (self.out_features(), self.in_features());
        if x.shape().len() != 3 || x.shape()[1] != inp {
            return Err(TensorError::Shape {
                op: "positionwise_dense",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            }
            .into());
        }
        let w = self.weight.reshape(&[out, inp, 1])?;
        Ok(x.conv1d(&w, &self.bias, 1)?)
    }
}

impl<S: Scalar> Parameters<S> for PositionwiseDense<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Layer normalisation across the channel axis of each time step.
#[derive(Debug, Clone)]
pub struct LayerNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub epsilon: f64,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(channels: usize, epsilon: f64) -> Result<Self> {
        if channels == 0 || !(epsilon > 0.0) {
            return Err(LayerError::Config(format!(
                "layer norm needs channels > 0 and epsilon > 0 (got {channels}, {epsilon})"
            )));
        }
        Ok(Self {
            gamma: Tensor::variable(&[channels], vec![S::one(); channels]).expect("shape"),
            beta: zeros_var(&[channels]),
            epsilon,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.layer_norm_channels(&self.gamma, &self.beta, S::from_f64_lossy(self.epsilon))?)
    }
}

impl<S: Scalar> Parameters<S> for LayerNorm<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![("gamma".into(), &mut self.gamma), ("beta".into(), &mut self.beta)]
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time,
/// so evaluation is the identity.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(LayerError::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn forward<S: Scalar>(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let seed = match mode {
            Mode::Train { seed } if self.rate > 0.0 => seed,
            _ => return Ok(x.clone()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = S::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<S> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < self.rate { S::zero() } else { keep })
            .collect();
        Ok(x.mul(&Tensor::new(x.shape(), mask)?)?)
    }
}
