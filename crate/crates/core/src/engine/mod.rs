//! Training, checkpointing, synthesis and the synthetic training corpus.

mod adam;
mod checkpoint;
mod corpus;
mod synth;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use corpus::{
    extract_entry, load_entry, make_toy_corpus, read_manifest, toy_utterance, write_manifest, CorpusEntry,
    LoadedUtterance, ToyCorpusConfig, ToyUtterance,
};
pub use synth::{synthesize, SynthOptions};
pub use train::{TrainingUtterance, Trainer};

use serde::{Deserialize, Serialize};

use crate::diffusion::{linear_schedule, NoiseSchedule, TRAIN_BETA_END, TRAIN_BETA_START, TRAIN_STEPS};
use crate::dsp::{DspConfig, DEFAULT_ENERGY_FLOOR};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;

/// Whether the network sees the periodic signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Adaptive-prior baseline without periodic input.
    PriorGrad,
    /// Adaptive prior plus the sine/V-UV periodic input.
    PeriodGrad,
}

impl Mode {
    pub fn uses_periodic(self) -> bool {
        self == Mode::PeriodGrad
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PriorGrad => "priorgrad",
            Mode::PeriodGrad => "periodgrad",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "priorgrad" => Ok(Mode::PriorGrad),
            "periodgrad" => Ok(Mode::PeriodGrad),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Crop length in samples; must be a multiple of the hop length.
    pub segment_length: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Lower clamp of the prior standard deviation.
    pub energy_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PeriodGrad,
            diffusion_steps: TRAIN_STEPS,
            beta_start: TRAIN_BETA_START,
            beta_end: TRAIN_BETA_END,
            segment_length: 12000,
            batch_size: 1,
            learning_rate: 2e-4,
            total_steps: 20_000,
            seed: 0,
            adam: AdamConfig::default(),
            grad_clip: 1.0,
            energy_floor: DEFAULT_ENERGY_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dsp: &DspConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.segment_length == 0 || self.segment_length % dsp.hop_length != 0 {
            return bad(format!(
                "segment_length {} must be a positive multiple of hop_length {}",
                self.segment_length, dsp.hop_length
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be >= 0".into());
        }
        if !(self.energy_floor > 0.0 && self.energy_floor <= 1.0) {
            return bad(format!("energy_floor {} must lie in (0, 1]", self.energy_floor));
        }
        self.adam.validate()?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    /// Network shape implied by the features and the mode.
    pub fn network_for(&self, base: &NetworkConfig, dsp: &DspConfig) -> NetworkConfig {
        NetworkConfig {
            conditioner_dim: dsp.feature_dim(),
            periodic_dim: if self.mode.uses_periodic() { 2 } else { 0 },
            ..base.clone()
        }
    }
}
