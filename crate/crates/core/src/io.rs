//! File formats: 16-bit PCM WAV and the `PGF1` float matrix container.
//!
//! A `PGF1` file is a 16-byte header (`b"PGF1"`, `u32` rows, `u32` cols,
//! `u32` reserved = 0, all little-endian) followed by `rows * cols`
//! little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PGF_MAGIC: &[u8; 4] = b"PGF1";
pub const PGF_HEADER_LEN: usize = 16;

const PCM16_SCALE: f64 = 32768.0;

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{}: {:?} {}-bit (only 16-bit PCM is supported)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.into_samples::<i16>().enumerate() {
        let s = s.map_err(|e| wav_error(path, e))?;
        if i % channels == 0 {
            samples.push(f64::from(s) / PCM16_SCALE);
        }
    }
    Waveform::new(samples, spec.sample_rate)
}

pub fn save_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in wave.samples() {
        writer
            .write_sample(pcm16_from_amplitude(s))
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Clamps to `[-1, 1 - 1/32768]` and rounds to the nearest PCM16 code.
pub fn pcm16_from_amplitude(x: f64) -> i16 {
    let clamped = x.clamp(-1.0, 1.0 - 1.0 / PCM16_SCALE);
    (clamped * PCM16_SCALE).round() as i16
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => Error::Unsupported(format!("{}", path.display())),
        other => Error::format(path, other.to_string()),
    }
}

pub fn write_pgf<W: Write>(mut w: W, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "PGF1 payload has {} values, header says {rows}x{cols}",
            data.len()
        )));
    }
    let rows32 = u32::try_from(rows).map_err(|_| Error::Shape("too many rows".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Shape("too many cols".into()))?;
    w.write_all(PGF_MAGIC)?;
    w.write_all(&rows32.to_le_bytes())?;
    w.write_all(&cols32.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one PGF1 matrix; returns `(rows, cols, data)`.
pub fn read_pgf<R: Read>(mut r: R, origin: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut header = [0u8; PGF_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(origin, "truncated PGF1 header"))?;
    if &header[..4] != PGF_MAGIC {
        return Err(Error::format(origin, "bad PGF1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(origin, "PGF1 dimensions overflow"))?;
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(origin, "truncated PGF1 payload"))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

pub fn save_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<f32> = m.as_slice().iter().map(|&v| v as f32).collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_pgf(&mut w, m.rows(), m.cols(), &data)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    let (rows, cols, data) = read_pgf(r, path)?;
    Ok(Matrix::from_vec(
        rows,
        cols,
        data.into_iter().map(f64::from).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_scaling() {
        assert_eq!(pcm16_from_amplitude(0.5), 16384);
        assert_eq!(pcm16_from_amplitude(0.0), 0);
        assert_eq!(pcm16_from_amplitude(2.0), i16::MAX);
        assert_eq!(pcm16_from_amplitude(-3.0), i16::MIN);
    }

    #[test]
    fn wav_header_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..80).map(|i| if i == 3 { 0.5 } else { 0.0 }).collect();
        save_wav(&Waveform::new(samples, 16000).unwrap(), &path).unwrap();
        let w = load_wav(&path).unwrap();
        assert_eq!(w.len(), 80);
        assert_eq!(w.sample_rate(), 16000);
        assert_eq!(w.samples()[3], 0.5);
        assert_eq!(w.samples()[0], 0.0);
    }

    #[test]
    fn wav_round_trip_within_one_step() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let w = Waveform::new(samples.clone(), 22050).unwrap();
        save_wav(&w, &path).unwrap();
        let back = load_wav(&path).unwrap();
        let max_err = samples
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 32768.0, "max error {max_err}");
    }

    #[test]
    fn stereo_takes_first_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..10i16 {
            w.write_sample(i * 100).unwrap();
            w.write_sample(-1000).unwrap();
        }
        w.finalize().unwrap();
        let wave = load_wav(&path).unwrap();
        assert_eq!(wave.len(), 10);
        assert_eq!(wave.samples()[2], 200.0 / 32768.0);
    }

    #[test]
    fn unsupported_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Unsupported(_))));

        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"RIFF\x00\x00\x00\x00JUNKJUNK").unwrap();
        assert!(matches!(load_wav(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn pgf_round_trip_and_truncation() {
        let m = Matrix::from_rows(&[vec![1.0, -2.5], vec![0.125, 4.0], vec![3.0, 0.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgf");
        save_matrix(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PGF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(load_matrix(&path).unwrap(), m);

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Format { .. })));
    }
}
