use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Adam, Checkpoint, Mode, TrainConfig};
use crate::diffusion::{compute_prior, NoiseSchedule};
use crate::dsp::{DspConfig, NormStats, Waveform};
use crate::error::{Error, Result};
use crate::features::AcousticFeatureSeq;
use crate::network::{backward_into, forward_cached, Cache, NetInput, NetworkConfig, Parameters};
use crate::periodic::generate_periodic;
use crate::pitch::{F0Contour, PitchConfig};

/// One utterance prepared for training: audio, normalized conditioner,
/// periodic signal and prior, all frame-synchronous.
#[derive(Debug, Clone)]
pub struct TrainingUtterance {
    audio: Vec<f32>,
    cond: Vec<f32>,
    periodic: Vec<f32>,
    sigma: Vec<f32>,
    frames: usize,
    cond_dim: usize,
    hop: usize,
}

impl TrainingUtterance {
    /// `f0` drives the periodic signal; pass the ground-truth contour when
    /// one exists so its phase matches the audio.
    pub fn new(wave: &Waveform, features: &AcousticFeatureSeq, f0: &F0Contour, hop: usize, floor: f64) -> Result<Self> {
        let k = features.frames();
        if f0.len() != k {
            return Err(Error::Shape(format!("F0 has {} frames, features {k}", f0.len())));
        }
        let n = k * hop;
        let audio = wave.fit_to(n);
        let prior = compute_prior(features, hop, floor)?;
        let periodic = generate_periodic(f0, n)?;
        Self::from_parts(
            audio.samples().iter().map(|&v| v as f32).collect(),
            features.normalized().as_slice().iter().map(|&v| v as f32).collect(),
            features.dim(),
            periodic.interleaved().iter().map(|&v| v as f32).collect(),
            prior.sigma().iter().map(|&v| v as f32).collect(),
            hop,
        )
    }

    /// Assembles from raw buffers: `cond` is `K x cond_dim`, `periodic` is
    /// `N x 2` interleaved (may be empty), the rest have `N = K * hop` values.
    pub fn from_parts(
        audio: Vec<f32>,
        cond: Vec<f32>,
        cond_dim: usize,
        periodic: Vec<f32>,
        sigma: Vec<f32>,
        hop: usize,
    ) -> Result<Self> {
        if hop == 0 || cond_dim == 0 || cond.len() % cond_dim != 0 {
            return Err(Error::Shape("conditioner shape".into()));
        }
        let frames = cond.len() / cond_dim;
        let n = frames * hop;
        if frames == 0 || audio.len() != n || sigma.len() != n || !(periodic.is_empty() || periodic.len() == 2 * n) {
            return Err(Error::Shape(format!(
                "utterance buffers disagree: {frames} frames x {hop}, audio {}, prior {}, periodic {}",
                audio.len(),
                sigma.len(),
                periodic.len()
            )));
        }
        Ok(Self {
            audio,
            cond,
            periodic,
            sigma,
            frames,
            cond_dim,
            hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }
}

/// Optimizer state plus everything a checkpoint records.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub dsp: DspConfig,
    pub pitch: PitchConfig,
    pub stats: NormStats,
    pub schedule: NoiseSchedule,
    pub params: Parameters<f32>,
    pub adam: Adam,
    pub step: u64,
    threads: usize,
}

struct Draw {
    utt: usize,
    start: usize,
    frames: usize,
    t: usize,
    z: Vec<f32>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        network: &NetworkConfig,
        dsp: DspConfig,
        pitch: PitchConfig,
        stats: NormStats,
    ) -> Result<Self> {
        dsp.validate()?;
        config.validate(&dsp)?;
        let net = config.network_for(network, &dsp);
        if stats.dim() != net.conditioner_dim {
            return Err(Error::Shape(format!(
                "stats have {} dims, features {}",
                stats.dim(),
                net.conditioner_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Parameters::init(&net, &mut rng)?;
        let adam = Adam::new(config.adam, &params);
        Ok(Self {
            schedule: config.schedule()?,
            config,
            dsp,
            pitch,
            stats,
            params,
            adam,
            step: 0,
            threads: 1,
        })
    }

    /// Continues from a checkpoint; the step counter and moments carry over.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.validate()?;
        let adam = match ckpt.adam {
            Some(a) => a,
            None => Adam::new(ckpt.train.adam, &ckpt.params),
        };
        Ok(Self {
            config: ckpt.train,
            dsp: ckpt.dsp,
            pitch: ckpt.pitch,
            stats: ckpt.stats,
            schedule: ckpt.schedule,
            params: ckpt.params,
            adam,
            step: ckpt.step,
            threads: 1,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dsp: self.dsp.clone(),
            pitch: self.pitch,
            train: self.config.clone(),
            schedule: self.schedule.clone(),
            stats: self.stats.clone(),
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            step: self.step,
        }
    }

    /// Worker threads for the per-item passes. Results do not depend on it.
    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Prepares an utterance with this trainer's statistics and floor.
    pub fn prepare(&self, wave: &Waveform, features: &AcousticFeatureSeq, f0: &F0Contour) -> Result<TrainingUtterance> {
        let f = features.clone().with_stats(self.stats.clone())?;
        TrainingUtterance::new(wave, &f, f0, self.dsp.hop_length, self.config.energy_floor)
    }

    fn draw(&self, data: &[TrainingUtterance]) -> Vec<Draw> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step + 1);
        let seg = self.config.segment_length / self.dsp.hop_length;
        (0..self.config.batch_size)
            .map(|_| {
                let utt = rng.random_range(0..data.len());
                let k = data[utt].frames;
                let frames = seg.min(k);
                let start = rng.random_range(0..=k - frames);
                let t = rng.random_range(1..=self.schedule.steps());
                let z = (0..frames * data[utt].hop)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                    .collect();
                Draw {
                    utt,
                    start,
                    frames,
                    t,
                    z,
                }
            })
            .collect()
    }

    fn item(&self, d: &Draw, u: &TrainingUtterance, total: f64) -> Result<(Parameters<f32>, f64)> {
        let hop = u.hop;
        let (a, b) = (d.start * hop, (d.start + d.frames) * hop);
        let ab = self.schedule.alpha_bar(d.t);
        let (ca, cb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let sigma = &u.sigma[a..b];
        let eps: Vec<f32> = d.z.iter().zip(sigma).map(|(z, s)| z * s).collect();
        let x: Vec<f32> = u.audio[a..b].iter().zip(&eps).map(|(x0, e)| ca * x0 + cb * e).collect();
        let periodic = if self.config.mode.uses_periodic() {
            if u.periodic.is_empty() {
                return Err(Error::ModeMismatch("periodgrad training needs a periodic signal".into()));
            }
            Some(&u.periodic[2 * a..2 * b])
        } else {
            None
        };
        let input = NetInput {
            x: &x,
            cond: &u.cond[d.start * u.cond_dim..(d.start + d.frames) * u.cond_dim],
            cond_hop: hop,
            periodic,
            t_cont: d.t as f64,
        };
        let mut cache = Cache::default();
        let eps_hat = forward_cached(&self.params, &input, &mut cache)?;
        let mut loss = 0.0;
        let scale = (-2.0 / total) as f32;
        let grad: Vec<f32> = eps
            .iter()
            .zip(&eps_hat)
            .zip(sigma)
            .map(|((e, h), s)| {
                let r = e - h;
                let w = 1.0 / (s * s);
                loss += f64::from(r) * f64::from(r) * f64::from(w);
                scale * r * w
            })
            .collect();
        let mut grads = self.params.zeros_like();
        backward_into(&self.params, &input, &cache, &grad, &mut grads)?;
        Ok((grads, loss / total))
    }

    /// Loss of the current parameters on one freshly drawn batch; no update.
    pub fn evaluate(&self, data: &[TrainingUtterance]) -> Result<f64> {
        Ok(self.batch(data)?.1)
    }

    fn batch(&self, data: &[TrainingUtterance]) -> Result<(Parameters<f32>, f64, Vec<Draw>)> {
        if data.is_empty() {
            return Err(Error::Config("no training utterances".into()));
        }
        let draws = self.draw(data);
        let total: f64 = draws.iter().map(|d| d.z.len() as f64).sum();
        let results: Vec<Result<(Parameters<f32>, f64)>> = if self.threads <= 1 || draws.len() == 1 {
            draws.iter().map(|d| self.item(d, &data[d.utt], total)).collect()
        } else {
            let chunk = draws.len().div_ceil(self.threads);
            std::thread::scope(|s| {
                let handles: Vec<_> = draws
                    .chunks(chunk)
                    .map(|part| {
                        s.spawn(move || {
                            part.iter()
                                .map(|d| self.item(d, &data[d.utt], total))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let (g, l) = r?;
            loss += l;
            for (acc, part) in grads.tensors_mut().into_iter().zip(g.tensors()) {
                acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            }
        }
        Ok((grads, loss, draws))
    }

    /// One optimizer update; returns the batch loss before the update.
    pub fn train_step(&mut self, data: &[TrainingUtterance]) -> Result<f64> {
        let (grads, loss, draws) = self.batch(data)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                t: draws.first().map_or(0, |d| d.t),
                max_param: self.params.max_abs(),
            });
        }
        self.adam
            .step(&mut self.params, &grads, self.config.learning_rate, self.config.grad_clip);
        self.step += 1;
        if !self.params.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                t: draws.first().map_or(0, |d| d.t),
                max_param: self.params.max_abs(),
            });
        }
        Ok(loss)
    }
}
