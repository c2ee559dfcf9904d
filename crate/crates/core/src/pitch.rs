//! F0 extraction, continuous log-F0 and semitone shifting.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const YIN_THRESHOLD: f64 = 0.15;
pub const SILENCE_DBFS: f64 = -60.0;
pub const DEFAULT_F0_MIN: f64 = 40.0;
pub const DEFAULT_F0_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    pub threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            f0_min: DEFAULT_F0_MIN,
            f0_max: DEFAULT_F0_MAX,
            threshold: YIN_THRESHOLD,
        }
    }
}

/// Frame-level F0 in Hz with V/UV flags; unvoiced frames carry `f0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    f0: Vec<f64>,
    hop_length: usize,
    sample_rate: u32,
}

impl F0Contour {
    /// Non-positive or non-finite entries are treated as unvoiced.
    pub fn new(f0: Vec<f64>, hop_length: usize, sample_rate: u32) -> Self {
        let f0 = f0
            .into_iter()
            .map(|v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
            .collect();
        Self {
            f0,
            hop_length,
            sample_rate,
        }
    }

    /// From the two-column `(f0 Hz, vuv)` file layout.
    pub fn from_matrix(m: &Matrix, hop_length: usize, sample_rate: u32) -> Result<Self> {
        if m.cols() != 2 {
            return Err(Error::Shape(format!("F0 matrix has {} cols, expected 2", m.cols())));
        }
        let f0 = (0..m.rows())
            .map(|k| if m.get(k, 1) > 0.5 { m.get(k, 0) } else { 0.0 })
            .collect();
        Ok(Self::new(f0, hop_length, sample_rate))
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), 2);
        for (k, &f) in self.f0.iter().enumerate() {
            m.set(k, 0, f);
            m.set(k, 1, if f > 0.0 { 1.0 } else { 0.0 });
        }
        m
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn vuv(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > 0.0).collect()
    }

    pub fn is_voiced(&self, k: usize) -> bool {
        self.f0[k] > 0.0
    }

    pub fn hop_length(&self) -> usize {
        self.hop_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.f0.iter().filter(|&&f| f > 0.0).count()
    }

    /// Multiplies voiced frames by `2^(semitones/12)`.
    pub fn shifted(&self, semitones: f64) -> F0Contour {
        let ratio = (semitones * LN_2 / 12.0).exp();
        F0Contour {
            f0: self.f0.iter().map(|&f| f * ratio).collect(),
            hop_length: self.hop_length,
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> F0Contour {
        F0Contour {
            f0: self.f0[..len.min(self.f0.len())].to_vec(),
            hop_length: self.hop_length,
            sample_rate: self.sample_rate,
        }
    }
}

/// YIN-style F0 tracker synchronized with a centered hop grid.
///
/// Each frame analyses about `2 * ceil(sr / f0_min)` samples around `k * hop`
/// (shifted inward at the signal edges): a difference function over lags
/// up to one `f0_min` period, cumulative-mean normalization, the first dip
/// below `threshold` refined to its local minimum and parabolically
/// interpolated. Frames quieter than -60 dBFS RMS, or without a dip below
/// the threshold, are unvoiced.
pub fn extract_f0(wave: &Waveform, hop_length: usize, cfg: &PitchConfig) -> Result<F0Contour> {
    let sr = f64::from(wave.sample_rate());
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max && cfg.f0_max <= sr / 4.0) {
        return Err(Error::Config(format!(
            "need 0 < f0_min ({}) < f0_max ({}) <= sample_rate/4 ({})",
            cfg.f0_min,
            cfg.f0_max,
            sr / 4.0
        )));
    }
    if hop_length == 0 {
        return Err(Error::Config("hop_length must be positive".into()));
    }
    let x = wave.samples();
    let n_frames = x.len().div_ceil(hop_length);
    let tau_max = (sr / cfg.f0_min).ceil() as usize;
    let tau_min = ((sr / cfg.f0_max).floor() as usize).max(2);
    let span = 2 * tau_max + 4;
    if x.len() < span {
        return Ok(F0Contour::new(vec![0.0; n_frames], hop_length, wave.sample_rate()));
    }
    let silence = 10f64.powf(SILENCE_DBFS / 20.0);
    let mut diff = vec![0.0; tau_max + 2];
    let mut f0 = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let center = k * hop_length;
        let start = center.saturating_sub(span / 2).min(x.len() - span);
        let frame = &x[start..start + span];
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / span as f64).sqrt();
        if rms < silence {
            f0.push(0.0);
            continue;
        }
        f0.push(yin_frame(frame, tau_min, tau_max, cfg.threshold, &mut diff).map_or(0.0, |tau| sr / tau));
    }
    let f0 = f0
        .into_iter()
        .map(|f| if f >= cfg.f0_min && f <= cfg.f0_max { f } else { 0.0 })
        .collect();
    Ok(F0Contour::new(f0, hop_length, wave.sample_rate()))
}

/// Returns the refined period in samples, or `None` if the frame is aperiodic.
///
/// For every lag the compared pairs `(j, j + tau)` are centred on the middle
/// of the frame, so short and long periods describe the same instant.
fn yin_frame(frame: &[f64], tau_min: usize, tau_max: usize, threshold: f64, d: &mut [f64]) -> Option<f64> {
    let w = tau_max;
    let mid = frame.len() / 2;
    d[0] = 0.0;
    for tau in 1..=tau_max + 1 {
        let lo = mid - w / 2 - tau / 2;
        d[tau] = frame[lo..lo + w]
            .iter()
            .zip(&frame[lo + tau..lo + tau + w])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    let mut cmnd = vec![1.0; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += d[tau];
        cmnd[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    let mut tau = tau_min;
    while tau <= tau_max {
        if cmnd[tau] < threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            break;
        }
        tau += 1;
    }
    if tau > tau_max {
        return None;
    }
    if tau <= tau_min || tau >= tau_max {
        return Some(tau as f64);
    }
    let (a, b, c) = (d[tau - 1], d[tau], d[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Some(tau as f64 + shift.clamp(-1.0, 1.0))
}

/// Log-F0 with unvoiced gaps filled by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLogF0 {
    values: Vec<f64>,
    vuv: Vec<bool>,
}

impl ContinuousLogF0 {
    pub fn from_parts(values: Vec<f64>, vuv: Vec<bool>) -> Result<Self> {
        if values.len() != vuv.len() {
            return Err(Error::Shape(format!(
                "{} log-F0 values vs {} V/UV flags",
                values.len(),
                vuv.len()
            )));
        }
        Ok(Self { values, vuv })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vuv(&self) -> &[bool] {
        &self.vuv
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Voiced frames back to Hz, unvoiced to 0.
    pub fn to_contour(&self, hop_length: usize, sample_rate: u32) -> F0Contour {
        let f0 = self
            .values
            .iter()
            .zip(&self.vuv)
            .map(|(&lf, &v)| if v { lf.exp() } else { 0.0 })
            .collect();
        F0Contour::new(f0, hop_length, sample_rate)
    }
}

pub fn to_continuous_log_f0(contour: &F0Contour) -> Result<ContinuousLogF0> {
    let voiced: Vec<usize> = (0..contour.len()).filter(|&k| contour.is_voiced(k)).collect();
    let (&first, &last) = match (voiced.first(), voiced.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::NoVoicedFrames),
    };
    let lf0: Vec<f64> = contour.f0().iter().map(|&f| if f > 0.0 { f.ln() } else { 0.0 }).collect();
    let mut values = vec![0.0; contour.len()];
    values[..=first].fill(lf0[first]);
    values[last..].fill(lf0[last]);
    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for k in a..=b {
            let frac = (k - a) as f64 / (b - a) as f64;
            values[k] = lf0[a] + (lf0[b] - lf0[a]) * frac;
        }
    }
    for &k in &voiced {
        values[k] = lf0[k];
    }
    Ok(ContinuousLogF0 {
        values,
        vuv: contour.vuv(),
    })
}

/// Adds `semitones * ln(2) / 12` to every value. Panics outside `[-24, 24]`.
pub fn shift_semitones(lf0: &ContinuousLogF0, semitones: f64) -> ContinuousLogF0 {
    assert!(
        (-24.0..=24.0).contains(&semitones),
        "semitone shift {semitones} outside [-24, 24]"
    );
    let delta = semitones * LN_2 / 12.0;
    ContinuousLogF0 {
        values: lf0.values.iter().map(|v| v + delta).collect(),
        vuv: lf0.vuv.clone(),
    }
}
