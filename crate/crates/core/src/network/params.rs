use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Real;
use crate::error::{Error, Result};

pub const KERNEL_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub n_layers: usize,
    pub n_cycles: usize,
    pub residual_channels: usize,
    /// Width of the sinusoidal step embedding.
    pub step_embed_dim: usize,
    /// Width of the two-layer step MLP.
    pub step_hidden_dim: usize,
    /// Feature dimension `D` of the frame-level conditioner.
    pub conditioner_dim: usize,
    /// Channels of the sample-level periodic input; 0 disables the periodic path.
    pub periodic_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_layers: 10,
            n_cycles: 2,
            residual_channels: 32,
            step_embed_dim: 64,
            step_hidden_dim: 128,
            conditioner_dim: 82,
            periodic_dim: 2,
        }
    }
}

impl NetworkConfig {
    /// 30 layers in three dilation cycles, 64 channels.
    pub fn large() -> Self {
        Self {
            n_layers: 30,
            n_cycles: 3,
            residual_channels: 64,
            step_embed_dim: 128,
            step_hidden_dim: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_layers,
            self.n_cycles,
            self.residual_channels,
            self.step_embed_dim,
            self.step_hidden_dim,
            self.conditioner_dim,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("network sizes must all be >= 1".into()));
        }
        if self.n_layers % self.n_cycles != 0 {
            return Err(Error::Config(format!(
                "n_layers ({}) must be divisible by n_cycles ({})",
                self.n_layers, self.n_cycles
            )));
        }
        if self.step_embed_dim % 2 != 0 || self.step_embed_dim < 4 {
            return Err(Error::Config("step_embed_dim must be even and >= 4".into()));
        }
        Ok(())
    }

    /// Same network without the periodic path.
    pub fn without_periodic(&self) -> Self {
        Self {
            periodic_dim: 0,
            ..self.clone()
        }
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % (self.n_layers / self.n_cycles))
    }

    pub fn receptive_field(&self) -> usize {
        1 + (KERNEL_SIZE - 1) * (0..self.n_layers).map(|i| self.dilation(i)).sum::<usize>()
    }
}

/// Closed-form parameter count.
pub fn count_params(cfg: &NetworkConfig) -> usize {
    let c = cfg.residual_channels;
    let (e, h, d, p) = (
        cfg.step_embed_dim,
        cfg.step_hidden_dim,
        cfg.conditioner_dim,
        cfg.periodic_dim,
    );
    let input = 2 * c;
    let mlp = e * h + h + h * h + h;
    let periodic = if p > 0 { p * 2 * c + 2 * c } else { 0 };
    let layer = KERNEL_SIZE * c * 2 * c + 2 * c // dilated conv
        + d * 2 * c + 2 * c // conditioner
        + periodic
        + h * 2 * c + 2 * c // step
        + c * 2 * c + 2 * c; // residual / skip
    let head = c * c + c + c + 1;
    input + mlp + cfg.n_layers * layer + head
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `[tap][in C][out 2C]`
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    /// `[D][2C]`
    pub cond_w: Vec<T>,
    pub cond_b: Vec<T>,
    /// `[P][2C]`; empty when the periodic path is disabled.
    pub per_w: Vec<T>,
    pub per_b: Vec<T>,
    /// `[H][2C]`
    pub step_w: Vec<T>,
    pub step_b: Vec<T>,
    /// `[C][2C]`: first `C` outputs are the residual, last `C` the skip.
    pub out_w: Vec<T>,
    pub out_b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: NetworkConfig,
    pub in_w: Vec<T>,
    pub in_b: Vec<T>,
    pub mlp_w1: Vec<T>,
    pub mlp_b1: Vec<T>,
    pub mlp_w2: Vec<T>,
    pub mlp_b2: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head_w1: Vec<T>,
    pub head_b1: Vec<T>,
    pub head_w2: Vec<T>,
    pub head_b2: Vec<T>,
}

/// Name and 2-D shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl<T: Real> Parameters<T> {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(config);
        let mut values = specs.iter().map(|s| vec![T::ZERO; s.rows * s.cols]);
        let mut next = || values.next().expect("spec count");
        let mut p = Parameters {
            config: config.clone(),
            in_w: next(),
            in_b: next(),
            mlp_w1: next(),
            mlp_b1: next(),
            mlp_w2: next(),
            mlp_b2: next(),
            layers: Vec::with_capacity(config.n_layers),
            head_w1: Vec::new(),
            head_b1: Vec::new(),
            head_w2: Vec::new(),
            head_b2: Vec::new(),
        };
        for _ in 0..config.n_layers {
            let conv_w = next();
            let conv_b = next();
            let cond_w = next();
            let cond_b = next();
            let (per_w, per_b) = if config.periodic_dim > 0 {
                (next(), next())
            } else {
                (Vec::new(), Vec::new())
            };
            p.layers.push(LayerParams {
                conv_w,
                conv_b,
                cond_w,
                cond_b,
                per_w,
                per_b,
                step_w: next(),
                step_b: next(),
                out_w: next(),
                out_b: next(),
            });
        }
        p.head_w1 = next();
        p.head_b1 = next();
        p.head_w2 = next();
        p.head_b2 = next();
        Ok(p)
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero, final projection zero.
    pub fn init<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let specs = tensor_specs(config);
        for (spec, tensor) in specs.iter().zip(p.tensors_mut()) {
            if is_bias(&spec.name) || spec.name == "head.w2" {
                continue;
            }
            let bound = (1.0 / spec.rows as f64).sqrt();
            for v in tensor.iter_mut() {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        tensor_specs(&self.config)
    }

    /// All tensors in canonical order (the order of [`tensor_specs`]).
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.in_w, &self.in_b, &self.mlp_w1, &self.mlp_b1, &self.mlp_w2, &self.mlp_b2];
        for l in &self.layers {
            out.extend([&l.conv_w[..], &l.conv_b, &l.cond_w, &l.cond_b]);
            if self.config.periodic_dim > 0 {
                out.extend([&l.per_w[..], &l.per_b]);
            }
            out.extend([&l.step_w[..], &l.step_b, &l.out_w, &l.out_b]);
        }
        out.extend([&self.head_w1[..], &self.head_b1, &self.head_w2, &self.head_b2]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let periodic = self.config.periodic_dim > 0;
        let mut out: Vec<&mut Vec<T>> = vec![
            &mut self.in_w,
            &mut self.in_b,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ];
        for l in &mut self.layers {
            out.extend([&mut l.conv_w, &mut l.conv_b, &mut l.cond_w, &mut l.cond_b]);
            if periodic {
                out.extend([&mut l.per_w, &mut l.per_b]);
            }
            out.extend([&mut l.step_w, &mut l.step_b, &mut l.out_w, &mut l.out_b]);
        }
        out.extend([&mut self.head_w1, &mut self.head_b1, &mut self.head_w2, &mut self.head_b2]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rebuilds from tensors given in canonical order.
    pub fn from_tensors(config: &NetworkConfig, tensors: Vec<Vec<T>>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let specs = tensor_specs(config);
        if tensors.len() != specs.len() {
            return Err(Error::Shape(format!(
                "{} tensors given, config needs {}",
                tensors.len(),
                specs.len()
            )));
        }
        for ((slot, t), spec) in p.tensors_mut().into_iter().zip(tensors).zip(&specs) {
            if t.len() != spec.rows * spec.cols {
                return Err(Error::Shape(format!(
                    "tensor {} has {} values, expected {}x{}",
                    spec.name,
                    t.len(),
                    spec.rows,
                    spec.cols
                )));
            }
            *slot = t;
        }
        Ok(p)
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        let tensors = self
            .tensors()
            .iter()
            .map(|t| t.iter().map(|v| U::from_f64(v.to_f64())).collect())
            .collect();
        Parameters::from_tensors(&self.config, tensors).expect("same config")
    }

    /// Sets every tensor to zero in place.
    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    /// Copy of the same weights with the periodic path removed.
    pub fn without_periodic(&self) -> Parameters<T> {
        let mut p = self.clone();
        p.config = self.config.without_periodic();
        for l in &mut p.layers {
            l.per_w.clear();
            l.per_b.clear();
        }
        p
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")
}

/// Canonical tensor list for a configuration.
pub fn tensor_specs(cfg: &NetworkConfig) -> Vec<TensorSpec> {
    let c = cfg.residual_channels;
    let (e, h, d, p) = (
        cfg.step_embed_dim,
        cfg.step_hidden_dim,
        cfg.conditioner_dim,
        cfg.periodic_dim,
    );
    let spec = |name: String, rows: usize, cols: usize| TensorSpec { name, rows, cols };
    let mut out = vec![
        spec("input.w".into(), 1, c),
        spec("input.b".into(), 1, c),
        spec("step_mlp.w1".into(), e, h),
        spec("step_mlp.b1".into(), 1, h),
        spec("step_mlp.w2".into(), h, h),
        spec("step_mlp.b2".into(), 1, h),
    ];
    for i in 0..cfg.n_layers {
        out.push(spec(format!("layers.{i}.conv.w"), KERNEL_SIZE * c, 2 * c));
        out.push(spec(format!("layers.{i}.conv.b"), 1, 2 * c));
        out.push(spec(format!("layers.{i}.cond.w"), d, 2 * c));
        out.push(spec(format!("layers.{i}.cond.b"), 1, 2 * c));
        if p > 0 {
            out.push(spec(format!("layers.{i}.periodic.w"), p, 2 * c));
            out.push(spec(format!("layers.{i}.periodic.b"), 1, 2 * c));
        }
        out.push(spec(format!("layers.{i}.step.w"), h, 2 * c));
        out.push(spec(format!("layers.{i}.step.b"), 1, 2 * c));
        out.push(spec(format!("layers.{i}.out.w"), c, 2 * c));
        out.push(spec(format!("layers.{i}.out.b"), 1, 2 * c));
    }
    out.push(spec("head.w1".into(), c, c));
    out.push(spec("head.b1".into(), 1, c));
    out.push(spec("head.w2".into(), c, 1));
    out.push(spec("head.b2".into(), 1, 1));
    out
}
