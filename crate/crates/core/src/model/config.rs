use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which feature streams the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Bimodal,
    AudioOnly,
    VisionOnly,
}

impl Modality {
    pub fn uses_audio(self) -> bool {
        self != Modality::VisionOnly
    }

    pub fn uses_video(self) -> bool {
        self != Modality::AudioOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_latent: usize,
    pub d_audio_in: usize,
    pub d_video_in: usize,
    /// Width of the learned word embedding table.
    pub d_text: usize,
    /// Hidden width of the position-wise feed-forward blocks.
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_goal: usize,
    pub vocab_size: usize,
    /// Longest decoded caption, counting the end token.
    pub max_len: usize,
    /// Exploration noise std relative to each goal component's magnitude.
    pub sigma_rel: f64,
    pub modality: Modality,
    /// Add sinusoidal positional encodings to encoder and decoder inputs.
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_latent: 128,
            d_audio_in: 16,
            d_video_in: 32,
            d_text: 24,
            d_ff: 256,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            d_goal: 16,
            vocab_size: 200,
            max_len: 12,
            sigma_rel: 0.1,
            modality: Modality::Bimodal,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_latent", self.d_latent),
            ("d_audio_in", self.d_audio_in),
            ("d_video_in", self.d_video_in),
            ("d_text", self.d_text),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("d_goal", self.d_goal),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.d_latent.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_latent {} not divisible by {} heads",
                self.d_latent, self.heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(ModelError::Config(format!("vocab_size {} leaves no content tokens", self.vocab_size)));
        }
        if !(self.sigma_rel >= 0.0 && self.sigma_rel.is_finite()) {
            return Err(ModelError::Config(format!("sigma_rel {}", self.sigma_rel)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_width() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig { d_latent: 30, heads: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let zero = ModelConfig { d_goal: 0, ..Default::default() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg: ModelConfig = toml::from_str("d_latent = 32\nmodality = \"audio_only\"").unwrap();
        assert_eq!(cfg.d_latent, 32);
        assert_eq!(cfg.modality, Modality::AudioOnly);
        assert_eq!(cfg.heads, 4);
    }
}
