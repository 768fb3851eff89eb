//! The multi-scale dilated residual network, its configuration, a plain CNN
//! baseline and the checkpoint container.

mod baseline;
pub mod checkpoint;
mod multiscale;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{LayerError, Mode, Parameters};
use crate::tensor::{Dtype, Scalar, Tensor, TensorError};

pub use baseline::BaselineCnn;
pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor};
pub use multiscale::{MultiScaleModel, ResidualBlock, ResidualBody};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Text reports print this next to the fourth body's receptive field.
pub const RECEPTIVE_FIELD_NOTE: &str =
    "note: the published text lists 259 points (1554 s) for the 5-block body; \
     the closed form (2^(D+2)-2)(k-1)+1 with k=5, D=4 gives 249 points (1494 s), \
     which matches the gradient probe";

/// Input span seen by one output of a residual body whose last block has
/// dilation `2^depth`: `(2^(depth+2) - 2)(k - 1) + 1`.
pub fn receptive_field(kernel_size: usize, depth: u32) -> Result<usize> {
    if kernel_size % 2 == 0 {
        return Err(ModelError::Config(format!("kernel size must be odd, got {kernel_size}")));
    }
    let span = 1usize
        .checked_shl(depth + 2)
        .and_then(|p| (p - 2).checked_mul(kernel_size - 1))
        .ok_or_else(|| ModelError::Config(format!("depth {depth} overflows")))?;
    Ok(span + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    MultiScale,
    BaselineCnn,
}

/// Output channels of every residual block, body by body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSchedule {
    /// Every block has the same width.
    Constant { channels: usize },
    /// First block `first`, last block `last`, geometric in between.
    Geometric { first: usize, last: usize },
    /// One list of block widths per body.
    Explicit { bodies: Vec<Vec<usize>> },
}

impl ChannelSchedule {
    pub fn resolve(&self, blocks_per_body: &[usize]) -> Result<Vec<Vec<usize>>> {
        let bodies: Vec<Vec<usize>> = match self {
            ChannelSchedule::Constant { channels } => blocks_per_body.iter().map(|&n| vec![*channels; n]).collect(),
            ChannelSchedule::Geometric { first, last } => blocks_per_body
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|i| {
                            if n == 1 {
                                return *last;
                            }
                            let ratio = *last as f64 / *first as f64;
                            (*first as f64 * ratio.powf(i as f64 / (n - 1) as f64)).round() as usize
                        })
                        .collect()
                })
                .collect(),
            ChannelSchedule::Explicit { bodies } => {
                let shape_ok = bodies.len() == blocks_per_body.len()
                    && bodies.iter().zip(blocks_per_body).all(|(b, &n)| b.len() == n);
                if !shape_ok {
                    return Err(ModelError::Config(format!(
                        "explicit channel schedule {bodies:?} does not match blocks per body {blocks_per_body:?}"
                    )));
                }
                bodies.clone()
            }
        };
        if bodies.iter().flatten().any(|&c| c == 0) {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        Ok(bodies)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            kernel_size: 5,
        }
    }
}

/// Full description of a network. Dilation rates are derived, not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub kernel_size: usize,
    pub blocks_per_body: Vec<usize>,
    pub channels: ChannelSchedule,
    pub dropout: f64,
    pub head_hidden: usize,
    pub layer_norm_eps: f64,
    pub precision: Dtype,
    pub baseline: BaselineConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::MultiScale,
            kernel_size: 5,
            blocks_per_body: vec![2, 3, 4, 5],
            channels: ChannelSchedule::Constant { channels: 96 },
            dropout: 0.1,
            head_hidden: 128,
            layer_norm_eps: 1e-5,
            precision: Dtype::F32,
            baseline: BaselineConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.head_hidden == 0 {
            return err("head_hidden must be positive".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return err("layer_norm_eps must be positive".into());
        }
        match self.architecture {
            Architecture::MultiScale => {
                if self.kernel_size % 2 == 0 {
                    return err(format!("kernel_size must be odd, got {}", self.kernel_size));
                }
                if self.blocks_per_body.is_empty() || self.blocks_per_body.contains(&0) {
                    return err(format!("blocks_per_body must be non-empty and positive: {:?}", self.blocks_per_body));
                }
                self.channels.resolve(&self.blocks_per_body)?;
            }
            Architecture::BaselineCnn => {
                if self.baseline.kernel_size % 2 == 0 {
                    return err(format!("baseline kernel_size must be odd, got {}", self.baseline.kernel_size));
                }
                if self.baseline.channels.is_empty() || self.baseline.channels.contains(&0) {
                    return err("baseline channels must be non-empty and positive".into());
                }
            }
        }
        Ok(())
    }

    /// Receptive field of each body, in samples.
    pub fn receptive_fields(&self) -> Result<Vec<usize>> {
        self.blocks_per_body
            .iter()
            .map(|&n| receptive_field(self.kernel_size, n.saturating_sub(1) as u32))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serialises")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// A network mapping `[batch, 1, T]` aggregate windows to `[batch, 1, T]`
/// appliance estimates in (0, 1).
pub trait SequenceModel<S: Scalar>: Parameters<S> + Send + Sync {
    fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>>;
    fn config(&self) -> &ModelConfig;
}

/// Total number of scalar parameters.
pub fn count_parameters<S: Scalar>(model: &impl Parameters<S>) -> usize {
    model.parameter_count()
}

/// Any supported architecture behind one type.
#[derive(Debug, Clone)]
pub enum AnyModel<S: Scalar> {
    MultiScale(MultiScaleModel<S>),
    Baseline(BaselineCnn<S>),
}

impl<S: Scalar> AnyModel<S> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config.architecture {
            Architecture::MultiScale => AnyModel::MultiScale(MultiScaleModel::new(config, seed)?),
            Architecture::BaselineCnn => AnyModel::Baseline(BaselineCnn::new(config, seed)?),
        })
    }

    /// Rebuilds a model from a checkpoint, checking every name and shape.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> std::result::Result<Self, CheckpointError> {
        let mut model = Self::new(&ckpt.config, 0).map_err(|e| CheckpointError::Format(e.to_string()))?;
        ckpt.load_into(&mut model)?;
        Ok(model)
    }
}

impl<S: Scalar> Parameters<S> for AnyModel<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        match self {
            AnyModel::MultiScale(m) => m.parameters(),
            AnyModel::Baseline(m) => m.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        match self {
            AnyModel::MultiScale(m) => m.parameters_mut(),
            AnyModel::Baseline(m) => m.parameters_mut(),
        }
    }
}

impl<S: Scalar> SequenceModel<S> for AnyModel<S> {
    fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        match self {
            AnyModel::MultiScale(m) => m.forward(x, mode),
            AnyModel::Baseline(m) => m.forward(x, mode),
        }
    }

    fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::MultiScale(m) => m.config(),
            AnyModel::Baseline(m) => m.config(),
        }
    }
}

/// SplitMix64 step, used to give every dropout layer its own stream.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives per-layer dropout modes from one forward-pass mode.
pub(crate) struct ModeStream {
    mode: Mode,
    counter: u64,
}

impl ModeStream {
    pub fn new(mode: Mode) -> Self {
        Self { mode, counter: 0 }
    }

    pub fn next(&mut self) -> Mode {
        self.counter += 1;
        match self.mode {
            Mode::Train { seed } => Mode::Train {
                seed: mix_seed(seed, self.counter),
            },
            Mode::Eval => Mode::Eval,
        }
    }
}

fn check_input<S: Scalar>(x: &Tensor<S>) -> Result<()> {
    match x.shape() {
        [_, 1, _] => Ok(()),
        other => Err(TensorError::Shape {
            op: "model input",
            lhs: other.to_vec(),
            rhs: vec![0, 1, 0],
        }
        .into()),
    }
}
