//! Frame-level acoustic features: log-mel, continuous log-F0 and V/UV.

use std::f64::consts::LN_2;

use crate::dsp::{log_mel, DspConfig, NormStats, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pitch::{extract_f0, to_continuous_log_f0, F0Contour, PitchConfig};

/// `K x (n_mels + 2)` features, stored un-normalized, with the
/// normalization statistics they are fed to the network with.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatureSeq {
    raw: Matrix,
    n_mels: usize,
    stats: NormStats,
}

impl AcousticFeatureSeq {
    pub fn new(raw: Matrix, n_mels: usize) -> Result<Self> {
        if raw.cols() != n_mels + 2 {
            return Err(Error::Shape(format!(
                "features have {} cols, expected n_mels + 2 = {}",
                raw.cols(),
                n_mels + 2
            )));
        }
        if raw.rows() == 0 {
            return Err(Error::Shape("feature sequence has no frames".into()));
        }
        if !raw.is_finite() {
            return Err(Error::Numeric {
                context: "feature matrix".into(),
            });
        }
        if (0..raw.rows()).any(|k| {
            let v = raw.get(k, n_mels + 1);
            v != 0.0 && v != 1.0
        }) {
            return Err(Error::Shape("V/UV column must be 0 or 1".into()));
        }
        let dim = raw.cols();
        Ok(Self {
            raw,
            n_mels,
            stats: NormStats::identity(dim),
        })
    }

    pub fn with_stats(mut self, stats: NormStats) -> Result<Self> {
        if stats.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "stats have {} dims, features {}",
                stats.dim(),
                self.dim()
            )));
        }
        self.stats = stats;
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.raw.rows()
    }

    pub fn dim(&self) -> usize {
        self.raw.cols()
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn raw(&self) -> &Matrix {
        &self.raw
    }

    pub fn normalized(&self) -> Matrix {
        self.stats.normalize(&self.raw).expect("dims checked at construction")
    }

    pub fn raw_log_mel(&self) -> Result<Matrix> {
        Ok(self.raw.columns(0, self.n_mels))
    }

    pub fn log_f0(&self) -> Vec<f64> {
        self.raw.column(self.n_mels)
    }

    pub fn vuv(&self) -> Vec<bool> {
        self.raw.column(self.n_mels + 1).iter().map(|&v| v > 0.5).collect()
    }

    /// The non-interpolated contour: `exp(log F0)` on voiced frames, 0 elsewhere.
    pub fn f0_contour(&self, hop_length: usize, sample_rate: u32) -> F0Contour {
        let f0 = self
            .log_f0()
            .iter()
            .zip(self.vuv())
            .map(|(&lf, v)| if v { lf.exp() } else { 0.0 })
            .collect();
        F0Contour::new(f0, hop_length, sample_rate)
    }

    /// Transposes the log-F0 column by `semitones`.
    pub fn shifted(&self, semitones: f64) -> AcousticFeatureSeq {
        let delta = semitones * LN_2 / 12.0;
        let mut raw = self.raw.clone();
        for k in 0..raw.rows() {
            let v = raw.get(k, self.n_mels);
            raw.set(k, self.n_mels, v + delta);
        }
        AcousticFeatureSeq {
            raw,
            n_mels: self.n_mels,
            stats: self.stats.clone(),
        }
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> AcousticFeatureSeq {
        AcousticFeatureSeq {
            raw: self.raw.slice_rows(start, end),
            n_mels: self.n_mels,
            stats: self.stats.clone(),
        }
    }
}

/// Log-mel + continuous log-F0 + V/UV for one waveform, plus the raw contour.
pub fn extract_features(
    wave: &Waveform,
    dsp: &DspConfig,
    pitch: &PitchConfig,
) -> Result<(AcousticFeatureSeq, F0Contour)> {
    if wave.sample_rate() != dsp.sample_rate {
        return Err(Error::Config(format!(
            "waveform is {} Hz, config expects {} Hz",
            wave.sample_rate(),
            dsp.sample_rate
        )));
    }
    let mel = log_mel(wave, dsp)?;
    let contour = extract_f0(wave, dsp.hop_length, pitch)?;
    let lf0 = to_continuous_log_f0(&contour)?;
    let mut raw = Matrix::zeros(mel.rows(), dsp.feature_dim());
    for k in 0..mel.rows() {
        let row = raw.row_mut(k);
        row[..dsp.n_mels].copy_from_slice(mel.row(k));
        row[dsp.n_mels] = lf0.values()[k];
        row[dsp.n_mels + 1] = if lf0.vuv()[k] { 1.0 } else { 0.0 };
    }
    Ok((AcousticFeatureSeq::new(raw, dsp.n_mels)?, contour))
}
