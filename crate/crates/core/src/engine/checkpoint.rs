//! Single-file checkpoint container:
//!
//! ```text
//! "PGCK" | u32 version | u64 manifest length | JSON manifest | PGF1 tensors...
//! ```
//!
//! Tensor offsets in the manifest are relative to the first byte after the
//! manifest. All integers are little-endian.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig};
use crate::diffusion::NoiseSchedule;
use crate::dsp::{DspConfig, NormStats};
use crate::error::{Error, Result};
use crate::io::{read_pgf, write_pgf, PGF_HEADER_LEN};
use crate::network::{NetworkConfig, Parameters};
use crate::pitch::PitchConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PGCK";
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dsp: DspConfig,
    pub pitch: PitchConfig,
    pub train: TrainConfig,
    /// Training schedule.
    pub schedule: NoiseSchedule,
    pub stats: NormStats,
    pub params: Parameters<f32>,
    /// Optimizer moments; absent in inference-only exports.
    pub adam: Option<Adam>,
    pub step: u64,
}

impl Checkpoint {
    pub fn network(&self) -> &NetworkConfig {
        &self.params.config
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.train.validate(&self.dsp)?;
        let net = self.network();
        net.validate()?;
        if self.train.mode.uses_periodic() != (net.periodic_dim > 0) {
            return Err(Error::ModeMismatch(format!(
                "mode {} with periodic_dim {}",
                self.train.mode.as_str(),
                net.periodic_dim
            )));
        }
        if net.conditioner_dim != self.dsp.feature_dim() || self.stats.dim() != net.conditioner_dim {
            return Err(Error::Shape(format!(
                "conditioner dim {}, feature dim {}, stats dim {}",
                net.conditioner_dim,
                self.dsp.feature_dim(),
                self.stats.dim()
            )));
        }
        if !self.params.is_finite() {
            return Err(Error::Numeric {
                context: "checkpoint parameters".into(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    dsp: DspConfig,
    pitch: PitchConfig,
    train: TrainConfig,
    network: NetworkConfig,
    schedule: NoiseSchedule,
    stats: NormStats,
    step: u64,
    adam_updates: Option<u64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

fn groups(ckpt: &Checkpoint) -> Vec<(&'static str, &Parameters<f32>)> {
    let mut out = vec![("param", &ckpt.params)];
    if let Some(a) = &ckpt.adam {
        out.push(("adam.m", &a.m));
        out.push(("adam.v", &a.v));
    }
    out
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (prefix, p) in groups(ckpt) {
        for (spec, data) in p.specs().iter().zip(p.tensors()) {
            tensors.push(TensorEntry {
                name: format!("{prefix}/{}", spec.name),
                rows: spec.rows,
                cols: spec.cols,
                offset: payload.len(),
            });
            write_pgf(&mut payload, spec.rows, spec.cols, data)?;
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dsp: ckpt.dsp.clone(),
        pitch: ckpt.pitch,
        train: ckpt.train.clone(),
        network: ckpt.network().clone(),
        schedule: ckpt.schedule.clone(),
        stats: ckpt.stats.clone(),
        step: ckpt.step,
        adam_updates: ckpt.adam.as_ref().map(|a| a.t),
        tensors,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(ckpt)?;
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    parse_checkpoint(&fs::read(path)?, path)
}

pub fn parse_checkpoint(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::Corrupt(format!("{}: {m}", origin.display()));
    if bytes.len() < PREAMBLE {
        return Err(corrupt("file shorter than the header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[PREAMBLE..];
    if mlen > body.len() as u64 {
        return Err(corrupt("manifest runs past end of file"));
    }
    let (json, payload) = body.split_at(mlen as usize);
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| corrupt(&format!("manifest: {e}")))?;
    if manifest.version != version {
        return Err(corrupt("manifest version disagrees with header"));
    }

    let read_group = |prefix: &str| -> Result<Option<Parameters<f32>>> {
        let specs = crate::network::tensor_specs(&manifest.network);
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let name = format!("{prefix}/{}", spec.name);
            let Some(entry) = manifest.tensors.iter().find(|t| t.name == name) else {
                if prefix != "param" && tensors.is_empty() {
                    return Ok(None);
                }
                return Err(corrupt(&format!("missing tensor {name}")));
            };
            if entry.rows != spec.rows || entry.cols != spec.cols {
                return Err(corrupt(&format!("tensor {name} has the wrong shape")));
            }
            let end = entry
                .offset
                .checked_add(PGF_HEADER_LEN + 4 * spec.rows * spec.cols)
                .ok_or_else(|| corrupt("offset overflow"))?;
            if end > payload.len() {
                return Err(corrupt(&format!("tensor {name} runs past end of file")));
            }
            let (r, c, data) = read_pgf(Cursor::new(&payload[entry.offset..end]), origin)
                .map_err(|e| corrupt(&e.to_string()))?;
            if (r, c) != (spec.rows, spec.cols) {
                return Err(corrupt(&format!("tensor {name} header disagrees with manifest")));
            }
            tensors.push(data);
        }
        Parameters::from_tensors(&manifest.network, tensors)
            .map(Some)
            .map_err(|e| corrupt(&e.to_string()))
    };
    let params = read_group("param")?.ok_or_else(|| corrupt("no parameters"))?;
    let m = read_group("adam.m")?;
    let v = read_group("adam.v")?;
    let adam = match (m, v, manifest.adam_updates) {
        (Some(m), Some(v), Some(t)) => Some(Adam {
            config: manifest.train.adam,
            m,
            v,
            t,
        }),
        (None, None, None) => None,
        _ => return Err(corrupt("incomplete optimizer state")),
    };
    let ckpt = Checkpoint {
        dsp: manifest.dsp,
        pitch: manifest.pitch,
        train: manifest.train,
        schedule: manifest.schedule,
        stats: manifest.stats,
        params,
        adam,
        step: manifest.step,
    };
    ckpt.validate().map_err(|e| match e {
        Error::ModeMismatch(_) => e,
        other => corrupt(&other.to_string()),
    })?;
    Ok(ckpt)
}
