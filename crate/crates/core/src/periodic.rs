//! Sample-level periodic conditioning signal: a phase-accumulated sine and a
//! V/UV channel, both hold-upsampled from a frame-level F0 contour.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pitch::F0Contour;

const TWO_PI: f64 = 2.0 * PI;

/// `N x 2` signal: column 0 is the sine, column 1 the V/UV flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSignal {
    sine: Vec<f64>,
    vuv: Vec<f64>,
    sample_rate: u32,
}

impl PeriodicSignal {
    pub fn sine(&self) -> &[f64] {
        &self.sine
    }

    pub fn vuv(&self) -> &[f64] {
        &self.vuv
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.sine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sine.is_empty()
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), 2);
        m.set_column(0, &self.sine);
        m.set_column(1, &self.vuv);
        m
    }

    pub fn from_matrix(m: &Matrix, sample_rate: u32) -> Result<Self> {
        if m.cols() != 2 {
            return Err(Error::Shape(format!("periodic signal has {} cols, expected 2", m.cols())));
        }
        Ok(Self {
            sine: m.column(0),
            vuv: m.column(1),
            sample_rate,
        })
    }

    /// Samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> PeriodicSignal {
        PeriodicSignal {
            sine: self.sine[start..end].to_vec(),
            vuv: self.vuv[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Interleaved `[sine, vuv]` pairs, the layout the network consumes.
    pub fn interleaved(&self) -> Vec<f64> {
        self.sine.iter().zip(&self.vuv).flat_map(|(&s, &v)| [s, v]).collect()
    }
}

/// Hold-upsampled per-sample F0, zero where unvoiced.
pub fn sample_f0(f0: &F0Contour, n: usize) -> Result<Vec<f64>> {
    let hop = f0.hop_length();
    if n != f0.len() * hop {
        return Err(Error::Shape(format!(
            "periodic length {n} != frames {} x hop {hop}",
            f0.len()
        )));
    }
    Ok((0..n).map(|i| f0.f0()[i / hop]).collect())
}

/// Wrapped phase track: `phi[n] = phi[n-1] + 2*pi*f0[n]/sr`, `phi[-1] = 0`.
/// Unvoiced samples have `f0 = 0`, so the phase is held across gaps.
pub fn phase_track(f0_samples: &[f64], sample_rate: u32) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let mut phase = 0.0;
    f0_samples
        .iter()
        .map(|&f| {
            phase = (phase + TWO_PI * f / sr) % TWO_PI;
            phase
        })
        .collect()
}

pub fn generate_periodic(f0: &F0Contour, n: usize) -> Result<PeriodicSignal> {
    let nyquist = f64::from(f0.sample_rate()) / 2.0;
    if let Some(&bad) = f0.f0().iter().find(|&&f| f >= nyquist) {
        return Err(Error::Aliasing {
            f0: bad,
            sample_rate: f0.sample_rate(),
        });
    }
    if let Some(&bad) = f0.f0().iter().find(|f| !f.is_finite()) {
        return Err(Error::Numeric {
            context: format!("F0 value {bad}"),
        });
    }
    let per_sample = sample_f0(f0, n)?;
    let phase = phase_track(&per_sample, f0.sample_rate());
    let sine = per_sample
        .iter()
        .zip(&phase)
        .map(|(&f, &p)| if f > 0.0 { p.sin() } else { 0.0 })
        .collect();
    let vuv = per_sample.iter().map(|&f| if f > 0.0 { 1.0 } else { 0.0 }).collect();
    Ok(PeriodicSignal {
        sine,
        vuv,
        sample_rate: f0.sample_rate(),
    })
}

/// Periodic signal for the contour transposed by `semitones`.
pub fn regenerate_for_shift(f0: &F0Contour, semitones: f64, n: usize) -> Result<PeriodicSignal> {
    let ratio = (semitones * LN_2 / 12.0).exp();
    let nyquist = f64::from(f0.sample_rate()) / 2.0;
    if let Some(&bad) = f0.f0().iter().find(|&&f| f * ratio >= nyquist) {
        return Err(Error::Aliasing {
            f0: bad * ratio,
            sample_rate: f0.sample_rate(),
        });
    }
    if semitones == 0.0 {
        return generate_periodic(f0, n);
    }
    generate_periodic(&f0.shifted(semitones), n)
}
