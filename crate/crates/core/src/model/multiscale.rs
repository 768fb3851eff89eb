use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_input, ModeStream, ModelConfig, ModelError, Result, SequenceModel};
use crate::layers::{prefixed, prefixed_mut, DilatedConv1d, Dropout, LayerNorm, Mode, Parameters, PositionwiseDense};
use crate::tensor::{Scalar, Tensor};

/// Two dilated convolutions, each followed by layer norm, dropout and ReLU,
/// plus a shortcut from the block input.
#[derive(Debug, Clone)]
pub struct ResidualBlock<S: Scalar> {
    pub conv1: DilatedConv1d<S>,
    pub ln1: LayerNorm<S>,
    pub drop1: Dropout,
    pub conv2: DilatedConv1d<S>,
    pub ln2: LayerNorm<S>,
    pub drop2: Dropout,
    /// Kernel-1 convolution, present iff the block changes channel count.
    pub shortcut: Option<DilatedConv1d<S>>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        dropout: f64,
        eps: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let shortcut = (in_channels != out_channels)
            .then(|| DilatedConv1d::new(in_channels, out_channels, 1, 1, rng))
            .transpose()?;
        Ok(Self {
            conv1: DilatedConv1d::new(in_channels, out_channels, kernel_size, dilation, rng)?,
            ln1: LayerNorm::new(out_channels, eps)?,
            drop1: Dropout::new(dropout)?,
            conv2: DilatedConv1d::new(out_channels, out_channels, kernel_size, dilation, rng)?,
            ln2: LayerNorm::new(out_channels, eps)?,
            drop2: Dropout::new(dropout)?,
            shortcut,
        })
    }

    pub fn dilation(&self) -> usize {
        self.conv1.dilation
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let mut modes = ModeStream::new(mode);
        self.forward_with(x, &mut modes)
    }

    pub(crate) fn forward_with(&self, x: &Tensor<S>, modes: &mut ModeStream) -> Result<Tensor<S>> {
        let h = self.conv1.forward(x)?;
        let h = self.drop1.forward(&self.ln1.forward(&h)?, modes.next())?.relu();
        let h = self.conv2.forward(&h)?;
        let h = self.drop2.forward(&self.ln2.forward(&h)?, modes.next())?.relu();
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(skip.add(&h)?)
    }
}

impl<S: Scalar> Parameters<S> for ResidualBlock<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = prefixed("conv1", self.conv1.parameters());
        out.extend(prefixed("ln1", self.ln1.parameters()));
        out.extend(prefixed("conv2", self.conv2.parameters()));
        out.extend(prefixed("ln2", self.ln2.parameters()));
        if let Some(s) = &self.shortcut {
            out.extend(prefixed("shortcut", s.parameters()));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = prefixed_mut("conv1", self.conv1.parameters_mut());
        out.extend(prefixed_mut("ln1", self.ln1.parameters_mut()));
        out.extend(prefixed_mut("conv2", self.conv2.parameters_mut()));
        out.extend(prefixed_mut("ln2", self.ln2.parameters_mut()));
        if let Some(s) = &mut self.shortcut {
            out.extend(prefixed_mut("shortcut", s.parameters_mut()));
        }
        out
    }
}

/// Chain of residual blocks; block `i` uses dilation `2^i`.
#[derive(Debug, Clone)]
pub struct ResidualBody<S: Scalar> {
    pub blocks: Vec<ResidualBlock<S>>,
}

impl<S: Scalar> ResidualBody<S> {
    pub fn new(
        in_channels: usize,
        widths: &[usize],
        kernel_size: usize,
        dropout: f64,
        eps: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for (i, &c_out) in widths.iter().enumerate() {
            blocks.push(ResidualBlock::new(c_in, c_out, kernel_size, 1 << i, dropout, eps, rng)?);
            c_in = c_out;
        }
        let body = Self { blocks };
        body.check_dilations()?;
        Ok(body)
    }

    fn check_dilations(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            if b.conv1.dilation != 1 << i || b.conv2.dilation != 1 << i {
                return Err(ModelError::Config(format!(
                    "block {i} has dilations ({}, {}), expected {}",
                    b.conv1.dilation,
                    b.conv2.dilation,
                    1 << i
                )));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map(ResidualBlock::out_channels).unwrap_or(0)
    }

    /// Exponent `D` of the last block's dilation `2^D`.
    pub fn depth(&self) -> u32 {
        self.blocks.len().saturating_sub(1) as u32
    }

    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        self.forward_with(x, &mut ModeStream::new(mode))
    }

    pub(crate) fn forward_with(&self, x: &Tensor<S>, modes: &mut ModeStream) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward_with(&h, modes)?;
        }
        Ok(h)
    }
}

impl<S: Scalar> Parameters<S> for ResidualBody<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| prefixed(&format!("blocks.{i}"), b.parameters()))
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| prefixed_mut(&format!("blocks.{i}"), b.parameters_mut()))
            .collect()
    }
}

/// Parallel residual bodies over the same input, concatenated on the channel
/// axis and mapped by a two-layer position-wise head to a sigmoid output.
#[derive(Debug, Clone)]
pub struct MultiScaleModel<S: Scalar> {
    pub bodies: Vec<ResidualBody<S>>,
    pub hidden: PositionwiseDense<S>,
    pub output: PositionwiseDense<S>,
    config: ModelConfig,
}

impl<S: Scalar> MultiScaleModel<S> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let widths = config.channels.resolve(&config.blocks_per_body)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bodies = widths
            .iter()
            .map(|w| ResidualBody::new(1, w, config.kernel_size, config.dropout, config.layer_norm_eps, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let concat: usize = bodies.iter().map(ResidualBody::out_channels).sum();
        Ok(Self {
            hidden: PositionwiseDense::new(concat, config.head_hidden, &mut rng)?,
            output: PositionwiseDense::new(config.head_hidden, 1, &mut rng)?,
            bodies,
            config: config.clone(),
        })
    }
}

impl<S: Scalar> Parameters<S> for MultiScaleModel<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = self
            .bodies
            .iter()
            .enumerate()
            .flat_map(|(i, b)| prefixed(&format!("bodies.{i}"), b.parameters()))
            .collect();
        out.extend(prefixed("head.hidden", self.hidden.parameters()));
        out.extend(prefixed("head.output", self.output.parameters()));
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<_> = self
            .bodies
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| prefixed_mut(&format!("bodies.{i}"), b.parameters_mut()))
            .collect();
        out.extend(prefixed_mut("head.hidden", self.hidden.parameters_mut()));
        out.extend(prefixed_mut("head.output", self.output.parameters_mut()));
        out
    }
}

impl<S: Scalar> SequenceModel<S> for MultiScaleModel<S> {
    fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        check_input(x)?;
        let mut modes = ModeStream::new(mode);
        let features = self
            .bodies
            .iter()
            .map(|b| b.forward_with(x, &mut modes))
            .collect::<Result<Vec<_>>>()?;
        let h = Tensor::concat(&features, 1)?;
        let h = self.hidden.forward(&h)?.relu();
        Ok(self.output.forward(&h)?.sigmoid())
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }
}
