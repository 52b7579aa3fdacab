use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diffcore::OptimizerConfig;
use crate::metrics::MeteorParams;
use crate::model::{Modality, ModelConfig, Objective};
use crate::signal::SignalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Warm start, then Worker/Manager fine-tuning with the biased objective.
    #[default]
    Bmhrl,
    /// As `Bmhrl`, with the weighted label-smoothed objective.
    BmhrlWeighted,
    /// Warm start only.
    Bmh,
    AudioOnly,
    VisionOnly,
}

impl Mode {
    pub fn modality(self) -> Modality {
        match self {
            Mode::AudioOnly => Modality::AudioOnly,
            Mode::VisionOnly => Modality::VisionOnly,
            _ => Modality::Bimodal,
        }
    }

    pub fn has_hrl_phase(self) -> bool {
        self != Mode::Bmh
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bmhrl => "bmhrl",
            Mode::BmhrlWeighted => "bmhrl_weighted",
            Mode::Bmh => "bmh",
            Mode::AudioOnly => "audio_only",
            Mode::VisionOnly => "vision_only",
        }
    }
}

/// Parameters of the synthetic two-clause grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarConfig {
    pub n_samples: usize,
    /// Total vocabulary size, special markers included.
    pub vocab_size: usize,
    pub video_classes: usize,
    pub audio_classes: usize,
    /// Tokens in the subject clause (chosen by the video class).
    pub subject_len: usize,
    /// Tokens in the action clause (chosen by the audio class).
    pub action_len: usize,
    pub audio_len: usize,
    pub video_len: usize,
    pub d_audio: usize,
    pub d_video: usize,
    /// Std of the Gaussian jitter added to every feature value.
    pub jitter: f64,
    pub delimiter: String,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            n_samples: 2000,
            vocab_size: 200,
            video_classes: 10,
            audio_classes: 10,
            subject_len: 3,
            action_len: 2,
            audio_len: 4,
            video_len: 4,
            d_audio: 16,
            d_video: 32,
            jitter: 0.0,
            delimiter: "and".to_string(),
        }
    }
}

impl GrammarConfig {
    /// Distinct terminals the grammar uses (clause words plus the delimiter).
    pub fn terminal_count(&self) -> usize {
        self.video_classes * self.subject_len + self.audio_classes * self.action_len + 1
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let positive = [
            ("video_classes", self.video_classes),
            ("audio_classes", self.audio_classes),
            ("subject_len", self.subject_len),
            ("action_len", self.action_len),
            ("audio_len", self.audio_len),
            ("video_len", self.video_len),
            ("d_audio", self.d_audio),
            ("d_video", self.d_video),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::Config(format!("grammar.{name} must be at least 1")));
        }
        if self.vocab_size < 3 + self.terminal_count() {
            return Err(HarnessError::Config(format!(
                "grammar needs {} terminals but vocab_size is {}",
                self.terminal_count(),
                self.vocab_size
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(HarnessError::Config(format!("grammar.jitter {}", self.jitter)));
        }
        if self.delimiter.trim().is_empty() || self.delimiter.contains(char::is_whitespace) {
            return Err(HarnessError::Config("grammar.delimiter must be a single word".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub warmstart_epochs: usize,
    /// Alternating epochs of the fine-tuning phase, starting with the Manager.
    pub hrl_epochs: usize,
    pub batch_size: usize,
    /// Learning rate for the fine-tuning phase; the warm-start rate otherwise.
    pub hrl_learning_rate: Option<f64>,
    pub baseline_learning_rate: f64,
    /// Fraction of samples held out for evaluation.
    pub val_fraction: f64,
    /// Evaluate on at most this many held-out samples per epoch.
    pub eval_limit: Option<usize>,
    pub write_checkpoints: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            warmstart_epochs: 10,
            hrl_epochs: 4,
            batch_size: 16,
            hrl_learning_rate: None,
            baseline_learning_rate: 0.01,
            val_fraction: 0.2,
            eval_limit: None,
            write_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub gamma_worker: f64,
    pub gamma_manager: f64,
    /// Scale of the weighted objective (`bmhrl_weighted` only).
    pub norm_const: f64,
    pub signal: SignalConfig,
    pub meteor: MeteorParams,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    /// Used by `gen-data`.
    pub grammar: GrammarConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Bmhrl,
            seed: 0,
            dataset: PathBuf::from("data/synthetic.bin"),
            output_dir: PathBuf::from("runs/default"),
            gamma_worker: 0.7,
            gamma_manager: 0.8,
            norm_const: 1.0,
            signal: SignalConfig::default(),
            meteor: MeteorParams::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            grammar: GrammarConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn objective(&self) -> Objective {
        match self.mode {
            Mode::BmhrlWeighted => Objective::Weighted { norm_const: self.norm_const },
            _ => Objective::Biased,
        }
    }

    /// Model configuration with the mode's modality and the given data dims.
    pub fn resolved_model(&self, d_audio: usize, d_video: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            modality: self.mode.modality(),
            d_audio_in: d_audio,
            d_video_in: d_video,
            vocab_size,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for (name, g) in [("gamma_worker", self.gamma_worker), ("gamma_manager", self.gamma_manager)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(HarnessError::Config(format!("{name} {g} outside [0, 1]")));
            }
        }
        if self.model.modality != Modality::Bimodal && self.model.modality != self.mode.modality() {
            return Err(HarnessError::Config(format!(
                "model.modality {:?} conflicts with mode {}",
                self.model.modality,
                self.mode.name()
            )));
        }
        if self.mode == Mode::BmhrlWeighted && !(self.norm_const > 0.0) {
            return Err(HarnessError::Config(format!("norm_const {} must be positive", self.norm_const)));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(HarnessError::Config("training.batch_size must be at least 1".into()));
        }
        if !(t.val_fraction > 0.0 && t.val_fraction < 1.0) {
            return Err(HarnessError::Config(format!("training.val_fraction {} not in (0, 1)", t.val_fraction)));
        }
        if t.warmstart_epochs + t.hrl_epochs == 0 {
            return Err(HarnessError::Config("no epochs to run".into()));
        }
        self.meteor.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.signal.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_sections() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            mode = "vision_only"
            seed = 9
            [model]
            d_latent = 32
            [training]
            hrl_epochs = 2
            [signal]
            label_smoothing = 0.4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::VisionOnly);
        assert_eq!(cfg.model.d_latent, 32);
        assert_eq!(cfg.training.hrl_epochs, 2);
        assert_eq!(cfg.signal.label_smoothing, 0.4);
        assert_eq!(cfg.gamma_worker, 0.7);
        assert_eq!(cfg.resolved_model(16, 32, 200).modality, Modality::VisionOnly);
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_conflicts() {
        let mut cfg = ExperimentConfig { mode: Mode::AudioOnly, ..Default::default() };
        cfg.model.modality = Modality::VisionOnly;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("mode = \"nope\"").is_err());
        let small = GrammarConfig { vocab_size: 20, ..Default::default() };
        assert!(small.validate().is_err());
    }
}
