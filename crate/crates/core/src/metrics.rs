//! Pitch-accuracy metrics, the pitch-shift evaluation sweep and a
//! multi-resolution spectral distance.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{stft, DspConfig, Waveform};
use crate::engine::{synthesize, Checkpoint, SynthOptions};
use crate::error::{Error, Result};
use crate::features::AcousticFeatureSeq;
use crate::periodic::{regenerate_for_shift, PeriodicSignal};
use crate::pitch::{extract_f0, F0Contour, PitchConfig};

const SEMITONES_PER_LN: f64 = 12.0 / std::f64::consts::LN_2;

pub const REPORT_HEADER: &str = "shift,f0_rmse_semitones,vuv_er_percent,n_frames,utterance";

#[derive(Debug, Clone, PartialEq)]
pub struct PitchReport {
    pub shift: f64,
    /// Over frames voiced in both contours; 0 when there are none.
    pub f0_rmse: f64,
    pub vuv_er: f64,
    /// Co-voiced frames behind `f0_rmse`.
    pub n_eval_frames: usize,
    /// Frames compared for `vuv_er`.
    pub n_frames: usize,
    pub utterance: String,
}

/// RMSE in semitones over co-voiced frames, and the number of such frames.
/// Contours are truncated to the shorter one.
pub fn f0_rmse(reference: &F0Contour, generated: &F0Contour) -> (f64, usize) {
    let n = reference.len().min(generated.len());
    let mut sum = 0.0;
    let mut count = 0;
    for k in 0..n {
        if reference.is_voiced(k) && generated.is_voiced(k) {
            let d = SEMITONES_PER_LN * (reference.f0()[k].ln() - generated.f0()[k].ln());
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        ((sum / count as f64).sqrt(), count)
    }
}

/// Percentage of frames whose V/UV flags disagree.
pub fn vuv_error_rate(reference: &F0Contour, generated: &F0Contour) -> f64 {
    let n = reference.len().min(generated.len());
    if n == 0 {
        return 0.0;
    }
    let wrong = (0..n)
        .filter(|&k| reference.is_voiced(k) != generated.is_voiced(k))
        .count();
    100.0 * wrong as f64 / n as f64
}

pub fn compare(reference: &F0Contour, generated: &F0Contour, shift: f64, utterance: &str) -> PitchReport {
    let (f0_rmse, n_eval_frames) = f0_rmse(reference, generated);
    PitchReport {
        shift,
        f0_rmse,
        vuv_er: vuv_error_rate(reference, generated),
        n_eval_frames,
        n_frames: reference.len().min(generated.len()),
        utterance: utterance.to_string(),
    }
}

/// Produces audio from (possibly shifted) features and periodic signal.
pub trait Generator: Sync {
    fn generate(&self, features: &AcousticFeatureSeq, periodic: &PeriodicSignal, index: usize) -> Result<Waveform>;
}

/// Reverse-process synthesis from a trained checkpoint. Utterance `i`
/// always draws from noise stream `i`, whatever the shift.
pub struct CheckpointGenerator<'a> {
    pub checkpoint: &'a Checkpoint,
    pub options: SynthOptions,
    pub seed: u64,
}

impl Generator for CheckpointGenerator<'_> {
    fn generate(&self, features: &AcousticFeatureSeq, periodic: &PeriodicSignal, index: usize) -> Result<Waveform> {
        let mut rng = utterance_rng(self.seed, index);
        let e = self.checkpoint.train.mode.uses_periodic().then_some(periodic);
        synthesize(self.checkpoint, features, e, &self.options, &mut rng)
    }
}

/// Emits the conditioning sine itself; isolates the metric pipeline.
pub struct OracleGenerator {
    pub amplitude: f64,
}

impl Generator for OracleGenerator {
    fn generate(&self, _: &AcousticFeatureSeq, periodic: &PeriodicSignal, _: usize) -> Result<Waveform> {
        let x = periodic.sine().iter().map(|s| self.amplitude * s).collect();
        Waveform::new(x, periodic.sample_rate())
    }
}

/// Per-utterance RNG derived from a run seed.
pub fn utterance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// A held-out utterance: its recording and the features extracted from it.
#[derive(Debug, Clone)]
pub struct SweepItem {
    pub name: String,
    pub reference: Waveform,
    pub features: AcousticFeatureSeq,
}

/// Copy-synthesis under log-F0 shifts. For every item and shift: shift the
/// log-F0 feature, regenerate the periodic signal from the shifted contour,
/// generate, and compare the extracted F0 against the shifted reference
/// contour. Rows are ordered by item, then shift.
pub fn shift_sweep(
    generator: &dyn Generator,
    items: &[SweepItem],
    shifts: &[f64],
    dsp: &DspConfig,
    pitch: &PitchConfig,
    threads: usize,
) -> Result<Vec<PitchReport>> {
    let run = |(index, item): (usize, &SweepItem)| -> Result<Vec<PitchReport>> {
        let reference = extract_f0(&item.reference, dsp.hop_length, pitch)?;
        let cond_f0 = item.features.f0_contour(dsp.hop_length, dsp.sample_rate);
        let n = item.features.frames() * dsp.hop_length;
        shifts
            .iter()
            .map(|&s| {
                let periodic = regenerate_for_shift(&cond_f0, s, n)?;
                let wave = generator.generate(&item.features.shifted(s), &periodic, index)?;
                let generated = extract_f0(&wave, dsp.hop_length, pitch)?;
                Ok(compare(&reference.shifted(s), &generated, s, &item.name))
            })
            .collect()
    };
    let indexed: Vec<(usize, &SweepItem)> = items.iter().enumerate().collect();
    let threads = threads.clamp(1, items.len().max(1));
    let per_item: Vec<Result<Vec<PitchReport>>> = if threads == 1 {
        indexed.into_iter().map(run).collect()
    } else {
        let chunk = indexed.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = indexed
                .chunks(chunk)
                .map(|part| scope.spawn(|| part.iter().map(|&it| run(it)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    };
    let mut rows = Vec::new();
    for r in per_item {
        rows.extend(r?);
    }
    Ok(rows)
}

/// One pooled row per shift, in first-seen shift order: RMSE pooled over all
/// co-voiced frames, V/UV-ER over all frames. `utterance` is `"ALL"`.
pub fn summarize(rows: &[PitchReport]) -> Vec<PitchReport> {
    let mut shifts: Vec<f64> = Vec::new();
    for r in rows {
        if !shifts.contains(&r.shift) {
            shifts.push(r.shift);
        }
    }
    shifts
        .into_iter()
        .map(|s| {
            let group = rows.iter().filter(|r| r.shift == s);
            let (mut sq, mut n_eval, mut wrong, mut n) = (0.0, 0usize, 0.0, 0usize);
            for r in group {
                sq += r.f0_rmse * r.f0_rmse * r.n_eval_frames as f64;
                n_eval += r.n_eval_frames;
                wrong += r.vuv_er / 100.0 * r.n_frames as f64;
                n += r.n_frames;
            }
            PitchReport {
                shift: s,
                f0_rmse: if n_eval > 0 { (sq / n_eval as f64).sqrt() } else { 0.0 },
                vuv_er: if n > 0 { 100.0 * wrong / n as f64 } else { 0.0 },
                n_eval_frames: n_eval,
                n_frames: n,
                utterance: "ALL".into(),
            }
        })
        .collect()
}

pub fn report_csv(rows: &[PitchReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            r.shift, r.f0_rmse, r.vuv_er, r.n_eval_frames, r.utterance
        );
    }
    out
}

pub fn write_report_csv(rows: &[PitchReport], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_csv(rows))?;
    Ok(())
}

/// FFT sizes of [`mr_stft_distance`]; hop is a quarter of the size.
pub const MR_STFT_SIZES: [usize; 3] = [512, 1024, 2048];
const MAG_FLOOR: f64 = 1e-7;

/// Mean over resolutions of spectral convergence plus mean absolute
/// log-magnitude difference. Inputs are truncated to the shorter length.
pub fn mr_stft_distance(reference: &Waveform, generated: &Waveform) -> Result<f64> {
    if reference.sample_rate() != generated.sample_rate() {
        return Err(Error::Config("sample rates differ".into()));
    }
    let n = reference.len().min(generated.len());
    if n == 0 {
        return Ok(0.0);
    }
    let (r, g) = (reference.fit_to(n), generated.fit_to(n));
    let mut total = 0.0;
    for fft in MR_STFT_SIZES {
        let cfg = DspConfig {
            sample_rate: reference.sample_rate(),
            fft_size: fft,
            win_length: fft,
            hop_length: fft / 4,
            ..DspConfig::default()
        };
        let (mr, mg) = (stft(&r, &cfg)?.magnitude(), stft(&g, &cfg)?.magnitude());
        let (mut diff, mut norm, mut log_l1) = (0.0, 0.0, 0.0);
        for (a, b) in mr.as_slice().iter().zip(mg.as_slice()) {
            diff += (a - b) * (a - b);
            norm += a * a;
            log_l1 += (a.max(MAG_FLOOR).ln() - b.max(MAG_FLOOR).ln()).abs();
        }
        let sc = if norm > 0.0 {
            (diff / norm).sqrt()
        } else if diff > 0.0 {
            1.0
        } else {
            0.0
        };
        total += sc + log_l1 / mr.as_slice().len() as f64;
    }
    Ok(total / MR_STFT_SIZES.len() as f64)
}
