use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How the exemplar reaches the denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Exemplar concatenated to the noisy input as a second channel.
    Stack,
    /// Context vector from a set encoder, injected by feature-wise modulation.
    Film,
    /// Unconditional.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub time_embed_dim: usize,
    pub conditioning_mode: ConditioningMode,
    /// Context vector width; only used in [`ConditioningMode::Film`].
    pub context_dim: usize,
    /// Width of the context encoder's first convolution (film mode).
    #[serde(default = "default_context_width")]
    pub context_encoder_width: usize,
    pub seed: u64,
}

fn default_context_width() -> usize {
    8
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            image_size: 48,
            base_channels: 16,
            channel_multipliers: vec![1, 2, 2],
            time_embed_dim: 64,
            conditioning_mode: ConditioningMode::Stack,
            context_dim: 64,
            context_encoder_width: default_context_width(),
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return Err(invalid("channel_multipliers must be a non-empty list of positive ints"));
        }
        if self.base_channels < 8 {
            return Err(invalid(format!(
                "base_channels must be >= 8, got {}",
                self.base_channels
            )));
        }
        let levels = self.channel_multipliers.len();
        let div = 1usize << (levels - 1);
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(invalid(format!(
                "image_size {} not divisible by 2^{}",
                self.image_size,
                levels - 1
            )));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(invalid("time_embed_dim must be even and >= 2"));
        }
        if self.conditioning_mode == ConditioningMode::Film {
            if self.context_dim == 0 {
                return Err(invalid("film conditioning needs context_dim > 0"));
            }
            if self.image_size % 4 != 0 {
                return Err(invalid("film context encoder needs image_size divisible by 4"));
            }
        }
        Ok(())
    }

    pub fn level_channels(&self) -> Vec<usize> {
        self.channel_multipliers
            .iter()
            .map(|m| m * self.base_channels)
            .collect()
    }

    pub fn input_channels(&self) -> usize {
        match self.conditioning_mode {
            ConditioningMode::Stack => 2,
            _ => 1,
        }
    }
}

/// Optimization settings for denoiser training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f32,
    pub batch_size: usize,
    pub steps: usize,
    /// Probability of replacing the exemplar with the blank image.
    /// `0` trains a plain conditional model; `> 0` enables guidance.
    pub drop_prob: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f32>,
    #[serde(default)]
    pub seed: u64,
}

fn default_clip() -> Option<f32> {
    Some(1.0)
}

impl Default for TrainHyper {
    /// Learning rate 1e-4, batch 128, exemplar drop-out 0.1.
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 128,
            steps: 10_000,
            drop_prob: 0.1,
            clip_norm: default_clip(),
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(invalid("drop_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}
