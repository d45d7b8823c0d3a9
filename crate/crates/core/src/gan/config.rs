use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::sampler::SamplingMode;
use crate::timbre::DescriptorMask;

pub const KERNEL_LEN: usize = 9;
pub const LRELU_SLOPE: f64 = 0.2;

/// Architecture of the generator/discriminator pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub sample_rate: u32,
    pub output_length: usize,
    /// Generator channels per synthesis block; the first block runs at
    /// `output_length / 2^(blocks - 1)` samples.
    pub g_channels: Vec<usize>,
    /// Discriminator channels per residual block; each block halves the length.
    pub d_channels: Vec<usize>,
    pub kernel_len: usize,
    pub mapping_layers: usize,
    pub d_z: usize,
    pub d_w: usize,
    pub d_embed: usize,
    /// Width of the discriminator head.
    pub d_hidden: usize,
    pub use_envelope: bool,
    /// Learned sin/cos blend in discriminator blocks; otherwise `(conv + bypass)/√2`.
    pub autofade: bool,
    /// Descriptors fed to the networks as conditioning.
    pub descriptors: DescriptorMask,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            output_length: 4096,
            g_channels: vec![64, 64, 32, 32, 16],
            d_channels: vec![16, 32, 32, 64, 64],
            kernel_len: KERNEL_LEN,
            mapping_layers: 4,
            d_z: 64,
            d_w: 64,
            d_embed: 16,
            d_hidden: 64,
            use_envelope: true,
            autofade: true,
            descriptors: DescriptorMask::ALL,
        }
    }
}

impl GanConfig {
    /// Reduced widths that keep every layer but train in minutes on one core.
    pub fn toy() -> Self {
        Self { g_channels: vec![16, 16, 16, 8, 8], d_channels: vec![8, 8, 16, 16, 16], ..Self::default() }
    }

    pub fn base_length(&self) -> usize {
        self.output_length >> (self.g_channels.len() - 1)
    }

    /// Time length after the last discriminator block.
    pub fn d_final_length(&self) -> usize {
        self.output_length >> self.d_channels.len()
    }

    pub fn cond_dim(&self, n_classes: usize) -> usize {
        n_classes + self.descriptors.count()
    }

    /// Width of the style vector: mapping output plus the re-concatenated embedding.
    pub fn style_dim(&self) -> usize {
        self.d_w + self.d_embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_len != KERNEL_LEN {
            bail!(Config, "kernel_len must be {KERNEL_LEN}, got {}", self.kernel_len);
        }
        if self.g_channels.is_empty() || self.d_channels.is_empty() {
            bail!(Config, "g_channels and d_channels must be non-empty");
        }
        if self.g_channels.iter().chain(&self.d_channels).any(|c| *c == 0) {
            bail!(Config, "channel counts must be positive");
        }
        let up = 1usize << (self.g_channels.len() - 1);
        if !self.output_length.is_multiple_of(up) || self.output_length / up == 0 {
            bail!(Config, "output_length {} is not base_length · 2^{}", self.output_length, self.g_channels.len() - 1);
        }
        let down = 1usize << self.d_channels.len();
        if !self.output_length.is_multiple_of(down) {
            bail!(Config, "output_length {} is not divisible by 2^{}", self.output_length, self.d_channels.len());
        }
        if self.output_length < crate::timbre::MIN_DESCRIPTOR_LEN {
            bail!(Config, "output_length must be at least {}", crate::timbre::MIN_DESCRIPTOR_LEN);
        }
        if self.mapping_layers == 0 || self.d_z == 0 || self.d_w == 0 || self.d_embed == 0 || self.d_hidden == 0 {
            bail!(Config, "mapping_layers, d_z, d_w, d_embed and d_hidden must be positive");
        }
        if self.sample_rate == 0 {
            bail!(Config, "sample_rate must be positive");
        }
        Ok(())
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub sampling: SamplingMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_lp: f64,
    /// The Lipschitz penalty is evaluated every this many D steps and scaled up
    /// by the same factor.
    pub penalty_interval: usize,
    /// Step of the finite difference used for the penalty's parameter gradient.
    pub penalty_fd_step: f64,
    /// Weight of the descriptor L1 term (descriptors on a 0-1 scale).
    pub desc_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 10,
            sampling: SamplingMode::Balanced,
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            lambda_lp: 10.0,
            penalty_interval: 4,
            penalty_fd_step: 1e-3,
            desc_weight: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.penalty_interval == 0 {
            bail!(Config, "batch_size and penalty_interval must be positive");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "need lr > 0 and betas in [0, 1)");
        }
        if !(self.lambda_lp >= 0.0) || !(self.desc_weight >= 0.0) || !(self.penalty_fd_step > 0.0) {
            bail!(Config, "lambda_lp and desc_weight must be non-negative, penalty_fd_step positive");
        }
        Ok(())
    }
}

pub(crate) fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}
