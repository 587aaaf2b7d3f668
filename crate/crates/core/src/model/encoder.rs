//! Image and vector encoders producing the feature embedding.
//!
//! The convolutional encoder is a small stand-in for a classification
//! backbone: blocks of (3x3 conv, relu, 2x2 max-pool) followed by global
//! average pooling, so the embedding width equals the last channel count.
//! The vector encoder serves worlds whose observations are plain vectors.

use crate::autodiff::{Parameter, Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderConfig {
    Conv(ConvEncoderConfig),
    Vector(VectorEncoderConfig),
}

/// Blocks of (conv 3x3 pad 1, relu, max-pool 2x2) with the given channel
/// widths, then global average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoderConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub widths: Vec<usize>,
}

/// Dense + relu chain on flat observation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEncoderConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
}

impl EncoderConfig {
    /// Default image encoder: 16/32/64 channels on 64x64 RGB frames,
    /// embedding width 64.
    pub fn default_conv() -> Self {
        EncoderConfig::Conv(ConvEncoderConfig { in_channels: 3, image_size: 64, widths: vec![16, 32, 64] })
    }

    /// Default vector encoder: two 64-wide hidden layers.
    pub fn default_vector(input_dim: usize) -> Self {
        EncoderConfig::Vector(VectorEncoderConfig { input_dim, widths: vec![64, 64] })
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            EncoderConfig::Conv(c) => *c.widths.last().unwrap_or(&0),
            EncoderConfig::Vector(c) => *c.widths.last().unwrap_or(&0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::Conv(c) => {
                if c.widths.is_empty() || c.in_channels == 0 {
                    return Err(Error::InvalidConfig("conv encoder needs channels".into()));
                }
                let blocks = c.widths.len() as u32;
                let divisor = 1usize << blocks;
                if c.image_size == 0 || c.image_size % divisor != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "image size {} must be divisible by {} for {} pool stages",
                        c.image_size, divisor, blocks
                    )));
                }
                Ok(())
            }
            EncoderConfig::Vector(c) => {
                if c.widths.is_empty() || c.input_dim == 0 {
                    return Err(Error::InvalidConfig("vector encoder needs widths".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Encoder {
    Conv { cfg: ConvEncoderConfig, kernels: Vec<Parameter> },
    Vector { cfg: VectorEncoderConfig, layers: Vec<(Parameter, Parameter)> },
}

impl Encoder {
    pub fn build(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        match config {
            EncoderConfig::Conv(cfg) => {
                let mut kernels = Vec::new();
                let mut c_in = cfg.in_channels;
                for (i, &c_out) in cfg.widths.iter().enumerate() {
                    let fan_in = c_in * 9;
                    let std = 1.0 / (fan_in as f64).sqrt();
                    kernels.push(Parameter::new(
                        format!("encoder.block{i}.kernel"),
                        Tensor::randn(&[c_out, c_in, 3, 3], std, rng),
                    ));
                    c_in = c_out;
                }
                Ok(Encoder::Conv { cfg: cfg.clone(), kernels })
            }
            EncoderConfig::Vector(cfg) => {
                let mut layers = Vec::new();
                let mut d_in = cfg.input_dim;
                for (i, &d_out) in cfg.widths.iter().enumerate() {
                    let std = 1.0 / (d_in as f64).sqrt();
                    layers.push((
                        Parameter::new(
                            format!("encoder.fc{i}.weight"),
                            Tensor::randn(&[d_in, d_out], std, rng),
                        ),
                        Parameter::new(format!("encoder.fc{i}.bias"), Tensor::zeros(&[d_out])),
                    ));
                    d_in = d_out;
                }
                Ok(Encoder::Vector { cfg: cfg.clone(), layers })
            }
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Encoder::Conv { kernels, .. } => kernels.iter().collect(),
            Encoder::Vector { layers, .. } => {
                layers.iter().flat_map(|(w, b)| [w, b]).collect()
            }
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Encoder::Conv { kernels, .. } => kernels.iter_mut().collect(),
            Encoder::Vector { layers, .. } => {
                layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.parameters().len()
    }

    /// Checks an input batch against the configured observation shape.
    pub fn validate_input(&self, input: &Tensor) -> Result<()> {
        match self {
            Encoder::Conv { cfg, .. } => {
                let s = input.shape();
                if s.len() != 4 || s[1] != cfg.in_channels || s[2] != cfg.image_size || s[3] != cfg.image_size {
                    return Err(Error::ShapeMismatch(format!(
                        "conv encoder expects [b,{},{},{}], got {:?}",
                        cfg.in_channels, cfg.image_size, cfg.image_size, s
                    )));
                }
            }
            Encoder::Vector { cfg, .. } => {
                let s = input.shape();
                if s.len() != 2 || s[1] != cfg.input_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "vector encoder expects [b,{}], got {:?}",
                        cfg.input_dim, s
                    )));
                }
            }
        }
        Ok(())
    }

    /// Runs the encoder over bound parameter ids; `param_ids` must follow
    /// `parameters()` order.
    pub fn forward(&self, tape: &mut Tape, param_ids: &[ValueId], input: ValueId) -> Result<ValueId> {
        match self {
            Encoder::Conv { .. } => {
                let mut x = input;
                for &k in param_ids {
                    x = tape.conv2d(x, k, 1, 1)?;
                    x = tape.relu(x);
                    x = tape.max_pool2d(x, 2)?;
                }
                tape.global_avg_pool(x)
            }
            Encoder::Vector { .. } => {
                let mut x = input;
                for pair in param_ids.chunks(2) {
                    x = tape.dense(x, pair[0], pair[1])?;
                    x = tape.relu(x);
                }
                Ok(x)
            }
        }
    }
}
