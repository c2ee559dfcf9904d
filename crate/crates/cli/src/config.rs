use std::path::{Path, PathBuf};

use periodgrad::diffusion::{align_fast_schedule, inference_schedule, NoiseSchedule};
use periodgrad::dsp::DspConfig;
use periodgrad::engine::{SynthOptions, ToyCorpusConfig, TrainConfig};
use periodgrad::network::NetworkConfig;
use periodgrad::pitch::PitchConfig;
use periodgrad::{Error, Result};
use serde::Deserialize;

/// Contents of the `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dsp: DspConfig,
    pub pitch: PitchConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub corpus: ToyCorpusConfig,
    pub synth: SynthSection,
    pub run: RunSection,
    pub paths: PathsSection,
}

/// Defaults for flags that name files; the flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Reverse-process betas; the fast 12-step schedule when absent.
    pub betas: Option<Vec<f64>>,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Steps between checkpoint writes during training.
    pub checkpoint_every: u64,
    /// Steps between progress log lines.
    pub log_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `--seed` everywhere randomness is drawn.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
            self.corpus.seed = s;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn synth_schedule(&self) -> Result<NoiseSchedule> {
        match &self.synth.betas {
            Some(b) => NoiseSchedule::from_betas(b.clone()),
            None => Ok(inference_schedule()),
        }
    }

    pub fn synth_options(&self) -> Result<SynthOptions> {
        Ok(SynthOptions {
            schedule: self.synth_schedule()?,
            deterministic: self.synth.deterministic,
        })
    }

    /// Checks every section before any command touches the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        let sr = f64::from(self.dsp.sample_rate);
        let p = &self.pitch;
        if !(p.f0_min > 0.0 && p.f0_min < p.f0_max && p.f0_max <= sr / 4.0) {
            return Err(Error::Config(format!(
                "pitch range [{}, {}] must satisfy 0 < f0_min < f0_max <= sample_rate/4",
                p.f0_min, p.f0_max
            )));
        }
        if !(p.threshold > 0.0 && p.threshold < 1.0) {
            return Err(Error::Config(format!("pitch threshold {} outside (0, 1)", p.threshold)));
        }
        self.train.validate(&self.dsp)?;
        self.train.network_for(&self.network, &self.dsp).validate()?;
        self.corpus.validate()?;
        if self.corpus.sample_rate != self.dsp.sample_rate || self.corpus.hop_length != self.dsp.hop_length {
            return Err(Error::Config(
                "corpus sample_rate/hop_length must match the dsp section".into(),
            ));
        }
        align_fast_schedule(&self.train.schedule()?, &self.synth_schedule()?)?;
        if self.run.checkpoint_every == 0 || self.run.log_every == 0 {
            return Err(Error::Config("checkpoint_every and log_every must be >= 1".into()));
        }
        Ok(())
    }
}
