use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{DspConfig, Waveform};
use crate::error::{Error, Result};
use crate::features::{extract_features, AcousticFeatureSeq};
use crate::io::{load_matrix, load_wav, save_matrix, save_wav};
use crate::periodic::{phase_track, sample_f0};
use crate::pitch::{F0Contour, PitchConfig};

/// One manifest row. Paths are stored relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub wav: PathBuf,
    pub f0: PathBuf,
    pub features: PathBuf,
}

impl CorpusEntry {
    pub fn resolve(&self, root: &Path) -> CorpusEntry {
        CorpusEntry {
            wav: root.join(&self.wav),
            f0: root.join(&self.f0),
            features: root.join(&self.features),
        }
    }

    /// Stem of the audio file, used to name derived outputs.
    pub fn name(&self) -> String {
        self.wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

pub fn write_manifest(entries: &[CorpusEntry], path: &Path) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        for p in [&e.wav, &e.f0, &e.features] {
            let s = p.to_string_lossy();
            if s.contains('\t') || s.contains('\n') {
                return Err(Error::Config(format!("path '{s}' cannot be stored in a manifest")));
            }
        }
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            e.wav.to_string_lossy(),
            e.f0.to_string_lossy(),
            e.features.to_string_lossy()
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads a manifest; returned paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<CorpusEntry>> {
    let text = fs::read_to_string(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::format(
                    path,
                    format!("line {} has {} fields, expected 3", i + 1, cols.len()),
                ));
            }
            Ok(CorpusEntry {
                wav: cols[0].into(),
                f0: cols[1].into(),
                features: cols[2].into(),
            }
            .resolve(root))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    pub n_utts: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub hop_length: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    pub max_harmonics: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_utts: 200,
            seconds: 1.0,
            sample_rate: 16000,
            hop_length: 80,
            f0_min: 100.0,
            f0_max: 400.0,
            max_harmonics: 8,
            seed: 0,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.seconds > 0.0 && self.seconds.is_finite()) {
            return bad(format!("duration {} s must be positive", self.seconds));
        }
        if self.sample_rate == 0 || self.hop_length == 0 {
            return bad("sample_rate and hop_length must be positive".into());
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max) {
            return bad(format!("need 0 < f0_min ({}) < f0_max ({})", self.f0_min, self.f0_max));
        }
        if self.f0_max >= 0.45 * f64::from(self.sample_rate) {
            return bad(format!("f0_max {} too close to Nyquist", self.f0_max));
        }
        if self.max_harmonics == 0 {
            return bad("max_harmonics must be >= 1".into());
        }
        if self.frames() < 20 {
            return bad("utterances must span at least 20 frames".into());
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.seconds * f64::from(self.sample_rate)).round() as usize
    }

    /// Frames per utterance; audio is generated at exactly `frames * hop` samples.
    pub fn frames(&self) -> usize {
        self.samples().div_ceil(self.hop_length)
    }
}

/// A generated utterance with its ground-truth contour.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub wave: Waveform,
    pub f0: F0Contour,
}

/// Spectral envelopes shared by the whole corpus; gain at frequency `f` Hz.
const ENVELOPES: [fn(f64) -> f64; 3] = [
    |f| 1.0 / (1.0 + f / 300.0),
    |f| (-f / 600.0).exp(),
    |f| 0.25 / (1.0 + f / 500.0) + (-((f - 900.0) / 350.0).powi(2)).exp(),
];

const FADE_SAMPLES: usize = 40;

/// Generates utterance `index` of the corpus; independent of other indices.
pub fn toy_utterance(cfg: &ToyCorpusConfig, index: usize) -> Result<ToyUtterance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let k = cfg.frames();
    let n = k * cfg.hop_length;
    let sr = f64::from(cfg.sample_rate);
    let (lo, hi) = (cfg.f0_min.ln(), cfg.f0_max.ln());

    // Piecewise-linear log-F0 with bounded jumps between breakpoints.
    let mut knots = vec![(0usize, rng.random_range(lo..hi))];
    while knots.last().unwrap().0 < k - 1 {
        let (pos, val) = *knots.last().unwrap();
        let mut next = pos + rng.random_range(40..100);
        // A short remainder would make the last segment steep; absorb it.
        if next + 40 > k - 1 {
            next = k - 1;
        }
        let v = (val + rng.random_range(-0.35..0.35)).clamp(lo, hi);
        knots.push((next, v));
    }
    let mut lf0 = vec![0.0; k];
    for w in knots.windows(2) {
        let ((a, va), (b, vb)) = (w[0], w[1]);
        for (f, slot) in lf0.iter_mut().enumerate().take(b + 1).skip(a) {
            *slot = va + (vb - va) * (f - a) as f64 / (b - a) as f64;
        }
    }

    let mut voiced = vec![true; k];
    for _ in 0..rng.random_range(0..=2) {
        let len = rng.random_range(6..=24).min(k / 4);
        let start = rng.random_range(0..k - len);
        voiced[start..start + len].iter_mut().for_each(|v| *v = false);
    }
    let f0: Vec<f64> = lf0
        .iter()
        .zip(&voiced)
        .map(|(&l, &v)| if v { l.exp() } else { 0.0 })
        .collect();
    let contour = F0Contour::new(f0, cfg.hop_length, cfg.sample_rate);

    let env = ENVELOPES[rng.random_range(0..ENVELOPES.len())];
    let gain = rng.random_range(0.3..0.6);
    let per_sample = sample_f0(&contour, n)?;
    let phase = phase_track(&per_sample, cfg.sample_rate);
    let fade = voicing_fade(&per_sample);
    let noise_std = gain * 10f64.powf(-40.0 / 20.0);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = noise_std * rng.sample::<f64, _>(StandardNormal);
        let f = per_sample[i];
        if f > 0.0 {
            let mut total = 0.0;
            let mut norm = 0.0;
            for h in 1..=cfg.max_harmonics {
                let fh = h as f64 * f;
                if fh >= 0.45 * sr {
                    break;
                }
                let a = env(fh);
                total += a * (h as f64 * phase[i]).sin();
                norm += a;
            }
            v += gain * fade[i] * total / norm;
        }
        samples.push(v);
    }
    Ok(ToyUtterance {
        wave: Waveform::new(samples, cfg.sample_rate)?,
        f0: contour,
    })
}

/// Linear ramps at both ends of every voiced run, kept inside the run.
fn voicing_fade(f0: &[f64]) -> Vec<f64> {
    let n = f0.len();
    let mut dist = vec![usize::MAX; n];
    let mut last = None;
    for i in 0..n {
        if f0[i] <= 0.0 {
            last = Some(i);
        } else if let Some(j) = last {
            dist[i] = i - j;
        }
    }
    last = None;
    for i in (0..n).rev() {
        if f0[i] <= 0.0 {
            last = Some(i);
        } else if let Some(j) = last {
            dist[i] = dist[i].min(j - i);
        }
    }
    dist.iter()
        .map(|&d| (d as f64 / FADE_SAMPLES as f64).min(1.0))
        .collect()
}

/// Writes `wav/`, `f0/` and a manifest into `out_dir`. Feature paths point
/// into `features/`, which the extraction stage fills in.
pub fn make_toy_corpus(cfg: &ToyCorpusConfig, out_dir: &Path) -> Result<Vec<CorpusEntry>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir.join("wav"))?;
    fs::create_dir_all(out_dir.join("f0"))?;
    let mut entries = Vec::with_capacity(cfg.n_utts);
    for i in 0..cfg.n_utts {
        let utt = toy_utterance(cfg, i)?;
        let name = format!("utt{i:04}");
        let entry = CorpusEntry {
            wav: format!("wav/{name}.wav").into(),
            f0: format!("f0/{name}.pgf").into(),
            features: format!("features/{name}.pgf").into(),
        };
        save_wav(&utt.wave, out_dir.join(&entry.wav))?;
        save_matrix(&utt.f0.to_matrix(), out_dir.join(&entry.f0))?;
        entries.push(entry);
    }
    write_manifest(&entries, &out_dir.join("manifest.tsv"))?;
    Ok(entries)
}

/// An utterance loaded from disk with its features and ground-truth F0.
#[derive(Debug, Clone)]
pub struct LoadedUtterance {
    pub name: String,
    pub wave: Waveform,
    pub features: AcousticFeatureSeq,
    pub f0: F0Contour,
}

/// Extracts features for one entry and writes them to its feature path.
pub fn extract_entry(entry: &CorpusEntry, dsp: &DspConfig, pitch: &PitchConfig) -> Result<AcousticFeatureSeq> {
    let wave = load_wav(&entry.wav)?;
    let (features, _) = extract_features(&wave, dsp, pitch)?;
    if let Some(dir) = entry.features.parent() {
        fs::create_dir_all(dir)?;
    }
    save_matrix(features.raw(), &entry.features)?;
    Ok(features)
}

/// Loads audio, stored features and ground-truth F0 of one entry.
pub fn load_entry(entry: &CorpusEntry, dsp: &DspConfig) -> Result<LoadedUtterance> {
    let wave = load_wav(&entry.wav)?;
    if wave.sample_rate() != dsp.sample_rate {
        return Err(Error::Config(format!(
            "{} is {} Hz, config expects {} Hz",
            entry.wav.display(),
            wave.sample_rate(),
            dsp.sample_rate
        )));
    }
    let features = AcousticFeatureSeq::new(load_matrix(&entry.features)?, dsp.n_mels)?;
    let f0 = F0Contour::from_matrix(&load_matrix(&entry.f0)?, dsp.hop_length, dsp.sample_rate)?;
    Ok(LoadedUtterance {
        name: entry.name(),
        wave,
        features,
        f0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::{extract_f0, PitchConfig};

    fn small() -> ToyCorpusConfig {
        ToyCorpusConfig {
            n_utts: 3,
            seconds: 0.5,
            ..ToyCorpusConfig::default()
        }
    }

    #[test]
    fn extracted_f0_matches_ground_truth() {
        let cfg = ToyCorpusConfig::default();
        for i in 0..12 {
            let u = toy_utterance(&cfg, i).unwrap();
            let est = extract_f0(&u.wave, cfg.hop_length, &PitchConfig::default()).unwrap();
            assert_eq!(est.len(), u.f0.len());
            // Edge frames analyse audio shifted inward, away from their own instant.
            let edge = (2 * 400 + 4) / 2 / cfg.hop_length + 1;
            let mut agree = 0;
            for k in 0..est.len() {
                if est.is_voiced(k) == u.f0.is_voiced(k) {
                    agree += 1;
                }
                let centred = k >= edge && k + edge < est.len();
                if centred && est.is_voiced(k) && u.f0.is_voiced(k) {
                    let rel = (est.f0()[k] / u.f0.f0()[k] - 1.0).abs();
                    assert!(rel < 0.01, "utt {i} frame {k}: {} vs {}", est.f0()[k], u.f0.f0()[k]);
                }
            }
            assert!(agree as f64 >= 0.95 * est.len() as f64, "utt {i}: V/UV agreement {agree}");
        }
    }

    #[test]
    fn contour_stays_in_range_and_audio_is_bounded() {
        let cfg = ToyCorpusConfig::default();
        for i in 0..10 {
            let u = toy_utterance(&cfg, i).unwrap();
            assert_eq!(u.wave.len(), 16000);
            assert!(u.f0.voiced_count() >= u.f0.len() / 2);
            for &f in u.f0.f0().iter().filter(|&&f| f > 0.0) {
                assert!((100.0 - 1e-9..=400.0 + 1e-9).contains(&f));
            }
            assert!(u.wave.samples().iter().all(|v| v.abs() < 0.8));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        make_toy_corpus(&small(), a.path()).unwrap();
        make_toy_corpus(&small(), b.path()).unwrap();
        for rel in ["manifest.tsv", "wav/utt0002.wav", "f0/utt0001.pgf"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        let other = ToyCorpusConfig { seed: 1, ..small() };
        let c = tempfile::tempdir().unwrap();
        make_toy_corpus(&other, c.path()).unwrap();
        assert_ne!(
            fs::read(a.path().join("wav/utt0000.wav")).unwrap(),
            fs::read(c.path().join("wav/utt0000.wav")).unwrap()
        );
    }

    #[test]
    fn empty_corpus_is_fine() {
        let d = tempfile::tempdir().unwrap();
        let cfg = ToyCorpusConfig { n_utts: 0, ..small() };
        assert!(make_toy_corpus(&cfg, d.path()).unwrap().is_empty());
        assert_eq!(fs::read_to_string(d.path().join("manifest.tsv")).unwrap(), "");
        assert!(read_manifest(&d.path().join("manifest.tsv")).unwrap().is_empty());
    }

    #[test]
    fn manifest_round_trip_resolves_paths() {
        let d = tempfile::tempdir().unwrap();
        let entries = make_toy_corpus(&small(), d.path()).unwrap();
        let back = read_manifest(&d.path().join("manifest.tsv")).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1], entries[1].resolve(d.path()));
        assert_eq!(back[1].name(), "utt0001");
        fs::write(d.path().join("bad.tsv"), "a\tb\n").unwrap();
        assert!(matches!(read_manifest(&d.path().join("bad.tsv")), Err(Error::Format { .. })));
    }
}
