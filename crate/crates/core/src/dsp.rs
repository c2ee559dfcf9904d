//! Shared signal processing: waveforms, centered STFT, log-mel analysis,
//! frame energy, frame-to-sample upsampling and feature normalization.
//!
//! Conventions:
//! - Frames are centered: frame `k` covers samples `k*hop - win/2 .. k*hop + win/2`
//!   of the reflect-padded signal, so there are exactly `ceil(len / hop)` frames.
//! - The window is a periodic Hann window of `win_length`, centered in the FFT buffer.
//! - The mel filterbank is applied to the *magnitude* spectrum (not power).
//!   Filters are triangular on the HTK mel scale and area-normalized
//!   (each triangle is scaled by `2 / (f_right - f_left)`).
//! - Log-mel values are `ln(max(v, 1e-5))`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const LOG_FLOOR: f64 = 1e-5;
pub const DEFAULT_ENERGY_FLOOR: f64 = 0.1;
pub const STD_FLOOR: f64 = 1e-8;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("waveform must have at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric {
                context: format!("waveform sample {i}"),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(len.max(1), 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for DspConfig {
    /// 16 kHz, 25 ms window, 5 ms hop, 80 mel bands.
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            fft_size: 1024,
            win_length: 400,
            hop_length: 80,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl DspConfig {
    /// 48 kHz analysis with a 2048-point FFT, 25 ms Hann window and 5 ms shift.
    pub fn studio_48k() -> Self {
        Self {
            sample_rate: 48000,
            fft_size: 2048,
            win_length: 1200,
            hop_length: 240,
            n_mels: 80,
            fmin: 0.0,
            fmax: 24000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.hop_length == 0 || self.hop_length > self.win_length {
            return bad(format!(
                "need 0 < hop_length ({}) <= win_length ({})",
                self.hop_length, self.win_length
            ));
        }
        if self.win_length > self.fft_size {
            return bad(format!(
                "win_length ({}) exceeds fft_size ({})",
                self.win_length, self.fft_size
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of centered frames for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop_length)
    }

    /// Feature dimension: log-mel bands, continuous log-F0 and V/UV.
    pub fn feature_dim(&self) -> usize {
        self.n_mels + 2
    }
}

/// Complex STFT, `frames x bins`, row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.bins..(k + 1) * self.bins]
    }

    pub fn magnitude(&self) -> Matrix {
        Matrix::from_vec(
            self.frames,
            self.bins,
            self.data.iter().map(|c| c.norm()).collect(),
        )
    }
}

pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn stft(wave: &Waveform, cfg: &DspConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let x = wave.samples();
    let n_frames = cfg.n_frames(x.len());
    let bins = cfg.n_bins();
    let window = hann_window(cfg.win_length);
    let offset = (cfg.fft_size - cfg.win_length) / 2;
    let half = (cfg.win_length / 2) as isize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut data = Vec::with_capacity(n_frames * bins);
    for k in 0..n_frames {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        let start = (k * cfg.hop_length) as isize - half;
        for (i, w) in window.iter().enumerate() {
            let s = x[reflect_index(start + i as isize, x.len())];
            buf[offset + i] = Complex64::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames: n_frames,
        bins,
        data,
    })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels x n_bins` triangular filterbank.
pub fn mel_filterbank(cfg: &DspConfig) -> Matrix {
    let n_bins = cfg.n_bins();
    let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(cfg.sample_rate) / cfg.fft_size as f64;
    let mut fb = Matrix::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (right - left);
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            let w = rising.min(falling).max(0.0);
            fb.set(m, b, w * norm);
        }
    }
    fb
}

/// Natural-log mel spectrogram, `frames x n_mels`.
pub fn log_mel(wave: &Waveform, cfg: &DspConfig) -> Result<Matrix> {
    let spec = stft(wave, cfg)?;
    let fb = mel_filterbank(cfg);
    let mut out = Matrix::zeros(spec.frames, cfg.n_mels);
    for k in 0..spec.frames {
        let mags: Vec<f64> = spec.frame(k).iter().map(|c| c.norm()).collect();
        for m in 0..cfg.n_mels {
            let v: f64 = fb.row(m).iter().zip(&mags).map(|(w, a)| w * a).sum();
            out.set(k, m, v.max(LOG_FLOOR).ln());
        }
    }
    Ok(out)
}

/// Per-frame energy normalized to the utterance maximum and floored.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEnergy {
    values: Vec<f64>,
    floor: f64,
}

impl FrameEnergy {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Unnormalized frame energy `sqrt(mean_m(mel_linear))` from a log-mel matrix.
///
/// Values sitting at the log floor count as silence, so the linear magnitude
/// is taken as `exp(mel) - 1e-5` (clamped at zero).
pub fn raw_frame_energy(log_mel: &Matrix) -> Vec<f64> {
    (0..log_mel.rows())
        .map(|k| {
            let row = log_mel.row(k);
            let mean = row
                .iter()
                .map(|&v| (v.exp() - LOG_FLOOR).max(0.0))
                .sum::<f64>()
                / row.len().max(1) as f64;
            mean.sqrt()
        })
        .collect()
}

pub fn frame_energy(log_mel: &Matrix, floor: f64) -> FrameEnergy {
    let raw = raw_frame_energy(log_mel);
    let max = raw.iter().copied().fold(0.0, f64::max);
    let values = if max > 0.0 {
        raw.iter().map(|e| (e / max).clamp(floor, 1.0)).collect()
    } else {
        vec![floor; raw.len()]
    };
    FrameEnergy { values, floor }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    /// Repeat each frame `hop` times.
    Hold,
    /// Piecewise-linear between frame centers (frame `k` sits at sample `k*hop`); edges held.
    Linear,
}

/// Upsamples a `K x D` frame sequence to `K*hop x D`.
pub fn upsample_frames(seq: &Matrix, hop: usize, mode: UpsampleMode) -> Matrix {
    assert!(seq.rows() >= 1 && hop >= 1, "upsample needs K >= 1 and hop >= 1");
    let (k_frames, dim) = (seq.rows(), seq.cols());
    let mut out = Matrix::zeros(k_frames * hop, dim);
    match mode {
        UpsampleMode::Hold => {
            for k in 0..k_frames {
                for j in 0..hop {
                    out.row_mut(k * hop + j).copy_from_slice(seq.row(k));
                }
            }
        }
        UpsampleMode::Linear => {
            for n in 0..k_frames * hop {
                let k = n / hop;
                let frac = (n % hop) as f64 / hop as f64;
                let next = (k + 1).min(k_frames - 1);
                let (a, b) = (seq.row(k), seq.row(next));
                for (d, o) in out.row_mut(n).iter_mut().enumerate() {
                    *o = a[d] + (b[d] - a[d]) * frac;
                }
            }
        }
    }
    out
}

/// Linear upsampling of a single frame-level track.
pub fn upsample_track(values: &[f64], hop: usize, mode: UpsampleMode) -> Vec<f64> {
    upsample_frames(&Matrix::from_vec(values.len(), 1, values.to_vec()), hop, mode).into_vec()
}

/// Per-dimension mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Pooled statistics over all rows of all matrices; `std` is floored at 1e-8.
    pub fn compute<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut dim = None;
        let mut count = 0usize;
        let mut sum = Vec::new();
        let mut sum_sq = Vec::new();
        for m in mats {
            let d = *dim.get_or_insert_with(|| {
                sum = vec![0.0; m.cols()];
                sum_sq = vec![0.0; m.cols()];
                m.cols()
            });
            if m.cols() != d {
                return Err(Error::Shape(format!("stats over {} vs {d} columns", m.cols())));
            }
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += m.rows();
        }
        if count == 0 {
            return Err(Error::Config("no frames to compute statistics over".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    /// Stats file layout: row 0 = mean, row 1 = std.
    pub fn to_matrix(&self) -> Matrix {
        let mut data = self.mean.clone();
        data.extend_from_slice(&self.std);
        Matrix::from_vec(2, self.dim(), data)
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows() != 2 {
            return Err(Error::Shape(format!("stats matrix has {} rows, expected 2", m.rows())));
        }
        Ok(Self {
            mean: m.row(0).to_vec(),
            std: m.row(1).iter().map(|s| s.max(STD_FLOOR)).collect(),
        })
    }

    fn check(&self, seq: &Matrix) -> Result<()> {
        if seq.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "sequence has {} dims, stats have {}",
                seq.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, seq: &Matrix) -> Result<Matrix> {
        self.check(seq)?;
        let mut out = seq.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c].max(STD_FLOOR);
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, seq: &Matrix) -> Result<Matrix> {
        self.check(seq)?;
        let mut out = seq.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c].max(STD_FLOOR) + self.mean[c];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16000).unwrap()
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 16000).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DspConfig::default().validate().is_ok());
        assert!(DspConfig::studio_48k().validate().is_ok());
        let mut c = DspConfig::default();
        c.hop_length = 500;
        assert!(c.validate().is_err());
        let mut c = DspConfig::default();
        c.win_length = 2048;
        assert!(c.validate().is_err());
        let mut c = DspConfig::default();
        c.fmax = 9000.0;
        assert!(c.validate().is_err());
        let mut c = DspConfig::default();
        c.n_mels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn reflect_indexing() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn impulse_at_frame_center_is_flat() {
        let cfg = DspConfig::default();
        let mut x = vec![0.0; 1600];
        x[800] = 1.0;
        let spec = stft(&wave(x), &cfg).unwrap();
        let center = hann_window(cfg.win_length)[cfg.win_length / 2];
        for c in spec.frame(800 / cfg.hop_length) {
            assert!((c.norm() - center).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram_and_floor_mel() {
        let cfg = DspConfig::default();
        let spec = stft(&wave(vec![0.0; 1000]), &cfg).unwrap();
        assert!(spec.data.iter().all(|c| c.norm() == 0.0));
        let mel = log_mel(&wave(vec![0.0; 1000]), &cfg).unwrap();
        assert!(mel.as_slice().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    /// Direct DFT of one windowed frame, used as an independent reference.
    fn direct_dft_frame(x: &[f64], cfg: &DspConfig, k: usize) -> Vec<Complex64> {
        let window = hann_window(cfg.win_length);
        let offset = (cfg.fft_size - cfg.win_length) / 2;
        let start = k as isize * cfg.hop_length as isize - (cfg.win_length / 2) as isize;
        let mut frame = vec![0.0; cfg.fft_size];
        for i in 0..cfg.win_length {
            frame[offset + i] = x[reflect_index(start + i as isize, x.len())] * window[i];
        }
        (0..cfg.n_bins())
            .map(|b| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(n, v)| {
                        let ang = -2.0 * PI * (b * n) as f64 / cfg.fft_size as f64;
                        Complex64::new(v * ang.cos(), v * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn sine_at_bin_frequency_concentrates_in_main_lobe() {
        let cfg = DspConfig::default();
        let bin = 40;
        let f = bin as f64 * 16000.0 / cfg.fft_size as f64;
        let x: Vec<f64> = (0..4000)
            .map(|n| (2.0 * PI * f * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft(&wave(x.clone()), &cfg).unwrap();
        let k = 20;
        let reference = direct_dft_frame(&x, &cfg, k);
        for (a, b) in spec.frame(k).iter().zip(&reference) {
            assert!((a - b).norm() < 1e-8);
        }
        let power: Vec<f64> = spec.frame(k).iter().map(|c| c.norm_sqr()).collect();
        let peak = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, bin);
        // Hann main lobe half-width is 2 * fft / win bins.
        let half_width = (2 * cfg.fft_size).div_ceil(cfg.win_length);
        let lobe: f64 = power[bin - half_width..=bin + half_width].iter().sum();
        let total: f64 = power.iter().sum();
        assert!(lobe / total >= 0.9, "main lobe fraction {}", lobe / total);
    }

    #[test]
    fn frame_count_is_ceil_over_grid() {
        for hop in [1usize, 3, 80, 100] {
            for len in [1usize, 2, 79, 80, 81, 159, 160, 1001] {
                let cfg = DspConfig {
                    hop_length: hop,
                    win_length: 200.max(hop),
                    fft_size: 256,
                    ..DspConfig::default()
                };
                let spec = stft(&wave(vec![0.1; len]), &cfg).unwrap();
                assert_eq!(spec.frames, len.div_ceil(hop), "len {len} hop {hop}");
            }
        }
    }

    /// Brute-force triangle evaluation, written independently from `mel_filterbank`.
    fn triangle_oracle(cfg: &DspConfig, m: usize, f: f64) -> f64 {
        let lo = 2595.0 * (1.0 + cfg.fmin / 700.0).log10();
        let hi = 2595.0 * (1.0 + cfg.fmax / 700.0).log10();
        let pts: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| {
                let mel = lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64;
                700.0 * (10f64.powf(mel / 2595.0) - 1.0)
            })
            .collect();
        let (a, b, c) = (pts[m], pts[m + 1], pts[m + 2]);
        let height = 2.0 / (c - a);
        if f <= a || f >= c {
            0.0
        } else if f <= b {
            height * (f - a) / (b - a)
        } else {
            height * (c - f) / (c - b)
        }
    }

    #[test]
    fn filterbank_matches_triangle_oracle() {
        let cfg = DspConfig::default();
        let fb = mel_filterbank(&cfg);
        let bin_hz = 16000.0 / cfg.fft_size as f64;
        for m in 0..cfg.n_mels {
            let mut row_sum = 0.0;
            for b in 0..cfg.n_bins() {
                let w = triangle_oracle(&cfg, m, b as f64 * bin_hz);
                assert!((fb.get(m, b) - w).abs() < 1e-12, "m={m} b={b}");
                row_sum += w;
            }
            let got: f64 = fb.row(m).iter().sum();
            assert!((got - row_sum).abs() < 1e-10);
        }
    }

    #[test]
    fn filterbank_covers_interior_bins() {
        for cfg in [DspConfig::default(), DspConfig::studio_48k()] {
            let fb = mel_filterbank(&cfg);
            assert!(fb.as_slice().iter().all(|&w| w >= 0.0));
            let bin_hz = f64::from(cfg.sample_rate) / cfg.fft_size as f64;
            for b in 0..cfg.n_bins() {
                let f = b as f64 * bin_hz;
                if f > cfg.fmin && f < cfg.fmax {
                    assert!((0..cfg.n_mels).any(|m| fb.get(m, b) > 0.0), "bin {b} uncovered");
                }
            }
        }
    }

    #[test]
    fn white_noise_mel_above_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mel = log_mel(&wave(x), &DspConfig::default()).unwrap();
        assert!(mel.as_slice().iter().all(|&v| v > LOG_FLOOR.ln()));
    }

    #[test]
    fn frame_energy_cases() {
        let silent = Matrix::from_vec(5, 3, vec![LOG_FLOOR.ln(); 15]);
        let e = frame_energy(&silent, 0.1);
        assert!(e.values().iter().all(|&v| v == 0.1));

        let mut m = Matrix::from_vec(4, 2, vec![(0.01f64).ln(); 8]);
        m.set(2, 0, (4.0f64).ln());
        m.set(2, 1, (4.0f64).ln());
        let e = frame_energy(&m, 0.1);
        assert_eq!(e.values()[2], 1.0);
        // sqrt(0.01 - 1e-5) / sqrt(4 - 1e-5) is about 0.05, clamped.
        assert_eq!(e.values()[0], 0.1);
        assert_eq!(e.len(), 4);
    }

    #[test]
    fn frame_energy_scale_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-0.3..0.3)).collect();
        let cfg = DspConfig::default();
        let base = raw_frame_energy(&log_mel(&wave(x.clone()), &cfg).unwrap());
        for g in [1.5, 2.0, 3.0] {
            let louder: Vec<f64> = x.iter().map(|v| v * g).collect();
            let e = raw_frame_energy(&log_mel(&wave(louder), &cfg).unwrap());
            for (a, b) in base.iter().zip(&e) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn upsample_cases() {
        let one = Matrix::from_vec(1, 2, vec![3.0, -1.0]);
        for mode in [UpsampleMode::Hold, UpsampleMode::Linear] {
            let up = upsample_frames(&one, 5, mode);
            assert_eq!(up.rows(), 5);
            assert!((0..5).all(|n| up.row(n) == [3.0, -1.0]));
        }
        let two = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
        let lin = upsample_frames(&two, 4, UpsampleMode::Linear).into_vec();
        assert_eq!(lin, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0]);
        let hold = upsample_frames(&two, 4, UpsampleMode::Hold).into_vec();
        assert_eq!(hold, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn normalize_cases() {
        let seq = Matrix::from_rows(&[vec![5.0, 7.0], vec![1.0, 7.0]]);
        let stats = NormStats::compute([&seq]).unwrap();
        assert_eq!(stats.mean, vec![3.0, 7.0]);
        assert_eq!(stats.std[0], 2.0);
        assert_eq!(stats.std[1], STD_FLOOR);
        let n = stats.normalize(&seq).unwrap();
        assert_eq!(n.row(0), [1.0, 0.0]);
        assert_eq!(n.row(1), [-1.0, 0.0]);
        assert!(stats.normalize(&Matrix::zeros(1, 3)).is_err());
        let back = NormStats::from_matrix(&stats.to_matrix()).unwrap();
        assert_eq!(back, stats);
    }

    proptest! {
        #[test]
        fn hold_length_is_exact(k in 1usize..30, hop in 1usize..50, d in 1usize..4) {
            let up = upsample_frames(&Matrix::zeros(k, d), hop, UpsampleMode::Hold);
            prop_assert_eq!(up.rows(), k * hop);
        }

        #[test]
        fn normalize_round_trip(
            values in proptest::collection::vec(-1e3f64..1e3, 12),
            mean in proptest::collection::vec(-50f64..50.0, 3),
            std in proptest::collection::vec(1e-8f64..1e2, 3),
        ) {
            let seq = Matrix::from_vec(4, 3, values);
            let stats = NormStats { mean, std };
            let back = stats.denormalize(&stats.normalize(&seq).unwrap()).unwrap();
            for (a, b) in seq.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }
}
