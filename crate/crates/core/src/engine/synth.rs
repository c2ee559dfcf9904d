use rand::Rng;

use super::Checkpoint;
use crate::diffusion::{align_fast_schedule, compute_prior, inference_schedule, reverse_step, sample_prior_noise, NoiseSchedule};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::features::AcousticFeatureSeq;
use crate::network::{forward, NetInput};
use crate::periodic::PeriodicSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Reverse-process schedule, aligned onto the training axis.
    pub schedule: NoiseSchedule,
    /// Skip the per-step noise and return the posterior means.
    pub deterministic: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            schedule: inference_schedule(),
            deterministic: false,
        }
    }
}

/// Runs the reverse process from prior noise to a waveform of
/// `frames * hop` samples. `periodic` must be given exactly when the
/// checkpoint was trained with it.
pub fn synthesize<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    features: &AcousticFeatureSeq,
    periodic: Option<&PeriodicSignal>,
    opts: &SynthOptions,
    rng: &mut R,
) -> Result<Waveform> {
    let mode = ckpt.train.mode;
    match (mode.uses_periodic(), periodic.is_some()) {
        (true, false) => {
            return Err(Error::ModeMismatch("periodgrad checkpoint needs a periodic signal".into()))
        }
        (false, true) => {
            return Err(Error::ModeMismatch(
                "priorgrad checkpoint cannot take a periodic signal".into(),
            ))
        }
        _ => {}
    }
    if features.n_mels() != ckpt.dsp.n_mels {
        return Err(Error::Shape(format!(
            "features have {} mel bands, checkpoint expects {}",
            features.n_mels(),
            ckpt.dsp.n_mels
        )));
    }
    let hop = ckpt.dsp.hop_length;
    let n = features.frames() * hop;
    if let Some(e) = periodic {
        if e.len() != n {
            return Err(Error::Shape(format!(
                "periodic signal has {} samples, features imply {n}",
                e.len()
            )));
        }
    }
    let features = features.clone().with_stats(ckpt.stats.clone())?;
    let cond: Vec<f32> = features.normalized().as_slice().iter().map(|&v| v as f32).collect();
    let e: Option<Vec<f32>> = periodic.map(|p| p.interleaved().iter().map(|&v| v as f32).collect());
    let prior = compute_prior(&features, hop, ckpt.train.energy_floor)?;
    let aligned = align_fast_schedule(&ckpt.schedule, &opts.schedule)?;

    let mut x = sample_prior_noise(&prior, rng);
    let mut xf = vec![0f32; n];
    for s in (1..=opts.schedule.steps()).rev() {
        xf.iter_mut().zip(&x).for_each(|(o, &v)| *o = v as f32);
        let input = NetInput {
            x: &xf,
            cond: &cond,
            cond_hop: hop,
            periodic: e.as_deref(),
            t_cont: aligned[s - 1].t_cont,
        };
        let eps: Vec<f64> = forward(&ckpt.params, &input)?.into_iter().map(f64::from).collect();
        x = reverse_step(&x, &eps, s, &opts.schedule, &prior, rng, opts.deterministic)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("synthesis step {s}, sample {i}"),
            });
        }
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Waveform::new(x, ckpt.dsp.sample_rate)
}
