//! Closed-form diffusion machinery: noise schedules, forward diffusion, the
//! reverse step, the energy-based adaptive prior, losses and alignment of a
//! short inference schedule onto the training step axis.
//!
//! All arithmetic here is `f64`. Step indices are 1-based (`1..=T`).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{frame_energy, upsample_track, UpsampleMode};
use crate::error::{Error, Result};
use crate::features::AcousticFeatureSeq;

/// Betas used for fast inference.
pub const INFERENCE_BETAS: [f64; 12] = [
    0.0001, 0.0005, 0.0008, 0.001, 0.005, 0.008, 0.01, 0.05, 0.08, 0.1, 0.2, 0.5,
];

pub const TRAIN_STEPS: usize = 50;
pub const TRAIN_BETA_START: f64 = 1e-4;
pub const TRAIN_BETA_END: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = Error;

    fn try_from(betas: Vec<f64>) -> Result<Self> {
        NoiseSchedule::from_betas(betas)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.betas
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Reverse-process variance; zero at `t = 1`.
    pub fn gamma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Config(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "invalid linear schedule: T={steps}, [{beta_start}, {beta_end}]"
        )));
    }
    let betas = (0..steps)
        .map(|i| {
            if i + 1 == steps && steps > 1 {
                beta_end
            } else if steps == 1 {
                beta_start
            } else {
                beta_start + i as f64 * (beta_end - beta_start) / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// `linspace(1e-4, 0.05, 50)`.
pub fn training_schedule() -> NoiseSchedule {
    linear_schedule(TRAIN_STEPS, TRAIN_BETA_START, TRAIN_BETA_END).expect("valid constants")
}

pub fn inference_schedule() -> NoiseSchedule {
    NoiseSchedule::from_betas(INFERENCE_BETAS.to_vec()).expect("valid constants")
}

/// Per-sample standard deviations of the adaptive Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivePrior {
    sigma: Vec<f64>,
    floor: f64,
}

impl AdaptivePrior {
    pub fn new(sigma: Vec<f64>, floor: f64) -> Result<Self> {
        if let Some(s) = sigma.iter().find(|&&s| !(s >= floor && s <= 1.0)) {
            return Err(Error::Config(format!("prior std {s} outside [{floor}, 1]")));
        }
        Ok(Self { sigma, floor })
    }

    pub fn unit(len: usize) -> Self {
        Self {
            sigma: vec![1.0; len],
            floor: 1.0,
        }
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> AdaptivePrior {
        AdaptivePrior {
            sigma: self.sigma[start..end].to_vec(),
            floor: self.floor,
        }
    }
}

/// Linearly interpolated normalized frame energy, one value per sample.
pub fn compute_prior(c: &AcousticFeatureSeq, hop: usize, floor: f64) -> Result<AdaptivePrior> {
    let mel = c.raw_log_mel()?;
    let energy = frame_energy(&mel, floor);
    let sigma = upsample_track(energy.values(), hop, UpsampleMode::Linear)
        .into_iter()
        .map(|s| s.clamp(floor, 1.0))
        .collect();
    AdaptivePrior::new(sigma, floor)
}

/// `sigma * z` with `z ~ N(0, 1)`.
pub fn sample_prior_noise<R: Rng + ?Sized>(prior: &AdaptivePrior, rng: &mut R) -> Vec<f64> {
    prior
        .sigma
        .iter()
        .map(|s| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    same_len(x0.len(), eps.len())?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Posterior mean of `x_{t-1}` given the predicted noise.
pub fn reverse_mean(x_t: &[f64], eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    same_len(x_t.len(), eps_hat.len())?;
    if let Some(i) = eps_hat.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: format!("predicted noise sample {i} at step {t}"),
        });
    }
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let scale = 1.0 / sched.alpha(t).sqrt();
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| scale * (x - coef * e)).collect())
}

/// One ancestral step. Noise `sqrt(gamma_t) * sigma * z` is added unless
/// `deterministic` or `t == 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    prior: &AdaptivePrior,
    rng: &mut R,
    deterministic: bool,
) -> Result<Vec<f64>> {
    let mut mean = reverse_mean(x_t, eps_hat, t, sched)?;
    if deterministic || t == 1 {
        return Ok(mean);
    }
    same_len(mean.len(), prior.len())?;
    let g = sched.gamma(t).sqrt();
    for (m, s) in mean.iter_mut().zip(prior.sigma()) {
        *m += g * s * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(mean)
}

pub fn loss_simple(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    same_len(eps.len(), eps_hat.len())?;
    let sum: f64 = eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / eps.len().max(1) as f64)
}

/// Mahalanobis loss under the diagonal prior, averaged over samples.
pub fn loss_weighted(eps: &[f64], eps_hat: &[f64], prior: &AdaptivePrior) -> Result<f64> {
    same_len(eps.len(), eps_hat.len())?;
    same_len(eps.len(), prior.len())?;
    let sum: f64 = eps
        .iter()
        .zip(eps_hat)
        .zip(prior.sigma())
        .map(|((a, b), s)| {
            assert!(*s >= prior.floor(), "prior std {s} below floor {}", prior.floor());
            (a - b) * (a - b) / (s * s)
        })
        .sum();
    Ok(sum / eps.len().max(1) as f64)
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length {a} vs {b}")));
    }
    Ok(())
}

/// An inference step placed on the continuous training-step axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedStep {
    /// Continuous training-step coordinate in `[0, T]`.
    pub t_cont: f64,
    pub beta: f64,
    pub alpha_bar: f64,
}

/// Places each inference step on the training axis by interpolating
/// `sqrt(alpha_bar)` between neighbouring training steps.
pub fn align_fast_schedule(train: &NoiseSchedule, infer: &NoiseSchedule) -> Result<Vec<AlignedStep>> {
    let big_t = train.steps();
    let min_ab = train.alpha_bar(big_t);
    let tol = 1e-12;
    (1..=infer.steps())
        .map(|s| {
            let ab = infer.alpha_bar(s);
            if ab < min_ab * (1.0 - tol) || ab > 1.0 {
                return Err(Error::Alignment {
                    step: s,
                    alpha_bar: ab,
                    min: min_ab,
                });
            }
            let target = ab.sqrt();
            let mut t_cont = big_t as f64;
            for t in 0..big_t {
                let hi = train.alpha_bar(t).sqrt();
                let lo = train.alpha_bar(t + 1).sqrt();
                if target <= hi && target >= lo {
                    t_cont = t as f64 + (hi - target) / (hi - lo);
                    break;
                }
            }
            Ok(AlignedStep {
                t_cont: t_cont.clamp(0.0, big_t as f64),
                beta: infer.beta(s),
                alpha_bar: ab,
            })
        })
        .collect()
}
