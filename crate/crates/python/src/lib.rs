//! Python bindings for the periodgrad vocoder. Arrays cross the boundary
//! as flat Python lists of floats.

use std::path::PathBuf;

use periodgrad::diffusion::{inference_schedule, training_schedule, NoiseSchedule};
use periodgrad::dsp::{DspConfig, Waveform};
use periodgrad::engine::{load_checkpoint, make_toy_corpus, Checkpoint, SynthOptions, ToyCorpusConfig};
use periodgrad::features::AcousticFeatureSeq;
use periodgrad::io::{load_matrix, load_wav, save_wav};
use periodgrad::matrix::Matrix;
use periodgrad::metrics::{f0_rmse, mr_stft_distance, vuv_error_rate, CheckpointGenerator, Generator};
use periodgrad::periodic::regenerate_for_shift;
use periodgrad::pitch::{extract_f0 as yin, F0Contour, PitchConfig};
use periodgrad::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Shape(_) | Error::ModeMismatch(_) | Error::Aliasing { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn contour(f0: Vec<f64>, hop_length: usize, sample_rate: u32) -> F0Contour {
    F0Contour::new(f0, hop_length, sample_rate)
}

/// A diffusion noise schedule.
#[pyclass(name = "NoiseSchedule", frozen)]
struct PyNoiseSchedule(NoiseSchedule);

#[pymethods]
impl PyNoiseSchedule {
    #[new]
    fn new(betas: Vec<f64>) -> PyResult<Self> {
        NoiseSchedule::from_betas(betas).map(Self).map_err(py_err)
    }

    /// The 50-step linear training schedule.
    #[staticmethod]
    fn training() -> Self {
        Self(training_schedule())
    }

    /// The 12-step fast inference schedule.
    #[staticmethod]
    fn inference() -> Self {
        Self(inference_schedule())
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.0.betas().to_vec()
    }

    #[getter]
    fn alpha_bars(&self) -> Vec<f64> {
        self.0.alpha_bars().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.steps()
    }
}

/// A trained model loaded from a `.ckpt` file.
#[pyclass(name = "Checkpoint", frozen)]
struct PyCheckpoint(Checkpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_checkpoint(path).map(Self).map_err(py_err)
    }

    /// `"priorgrad"` or `"periodgrad"`.
    #[getter]
    fn mode(&self) -> &'static str {
        self.0.train.mode.as_str()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.0.step
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.0.dsp.sample_rate
    }

    #[getter]
    fn hop_length(&self) -> usize {
        self.0.dsp.hop_length
    }

    /// Synthesizes from a feature file with the log-F0 shifted by
    /// `semitones`. Utterance `index` selects the noise stream.
    #[pyo3(signature = (features_path, semitones = 0.0, seed = 0, index = 0, deterministic = false))]
    fn synthesize(
        &self,
        py: Python<'_>,
        features_path: PathBuf,
        semitones: f64,
        seed: u64,
        index: usize,
        deterministic: bool,
    ) -> PyResult<Vec<f64>> {
        let ckpt = &self.0;
        py.detach(|| {
            let features = AcousticFeatureSeq::new(load_matrix(&features_path)?, ckpt.dsp.n_mels)?;
            let hop = ckpt.dsp.hop_length;
            let f0 = features.f0_contour(hop, ckpt.dsp.sample_rate);
            let periodic = regenerate_for_shift(&f0, semitones, features.frames() * hop)?;
            let generator = CheckpointGenerator {
                checkpoint: ckpt,
                options: SynthOptions {
                    schedule: inference_schedule(),
                    deterministic,
                },
                seed,
            };
            generator
                .generate(&features.shifted(semitones), &periodic, index)
                .map(Waveform::into_samples)
        })
        .map_err(py_err)
    }
}

/// Writes the synthetic harmonic corpus and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, n_utts = 200, seconds = 1.0, seed = 0))]
fn make_corpus(out_dir: PathBuf, n_utts: usize, seconds: f64, seed: u64) -> PyResult<PathBuf> {
    let cfg = ToyCorpusConfig {
        n_utts,
        seconds,
        seed,
        ..ToyCorpusConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    make_toy_corpus(&cfg, &out_dir).map_err(py_err)?;
    Ok(out_dir.join("manifest.tsv"))
}

/// Reads a PCM16 WAV file as `(samples, sample_rate)`.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let w = load_wav(path).map_err(py_err)?;
    let sr = w.sample_rate();
    Ok((w.into_samples(), sr))
}

/// Writes samples in [-1, 1] as PCM16.
#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    let w = Waveform::new(samples, sample_rate).map_err(py_err)?;
    save_wav(&w, path).map_err(py_err)
}

/// Frame-level F0 in Hz (0 for unvoiced) from the YIN tracker.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000, hop_length = 80))]
fn extract_f0(py: Python<'_>, samples: Vec<f64>, sample_rate: u32, hop_length: usize) -> PyResult<Vec<f64>> {
    py.detach(|| {
        let w = Waveform::new(samples, sample_rate)?;
        Ok(yin(&w, hop_length, &PitchConfig::default())?.f0().to_vec())
    })
    .map_err(py_err)
}

/// Un-normalized `(n_mels + 2)`-wide features as a list of frames.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000))]
fn extract_features(py: Python<'_>, samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    py.detach(|| {
        let dsp = DspConfig {
            sample_rate,
            ..DspConfig::default()
        };
        let w = Waveform::new(samples, sample_rate)?;
        let (f, _) = periodgrad::features::extract_features(&w, &dsp, &PitchConfig::default())?;
        let m: &Matrix = f.raw();
        Ok((0..m.rows()).map(|k| m.row(k).to_vec()).collect())
    })
    .map_err(py_err)
}

/// Semitone RMSE over frames voiced in both contours and their count.
#[pyfunction]
fn pitch_rmse(reference: Vec<f64>, generated: Vec<f64>) -> (f64, usize) {
    f0_rmse(&contour(reference, 80, 16000), &contour(generated, 80, 16000))
}

/// Percentage of frames whose voicing decisions differ.
#[pyfunction]
fn vuv_error(reference: Vec<f64>, generated: Vec<f64>) -> f64 {
    vuv_error_rate(&contour(reference, 80, 16000), &contour(generated, 80, 16000))
}

/// Multi-resolution STFT distance between two waveforms.
#[pyfunction]
#[pyo3(signature = (reference, generated, sample_rate = 16000))]
fn stft_distance(reference: Vec<f64>, generated: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
    let r = Waveform::new(reference, sample_rate).map_err(py_err)?;
    let g = Waveform::new(generated, sample_rate).map_err(py_err)?;
    mr_stft_distance(&r, &g).map_err(py_err)
}

#[pymodule]
fn periodgrad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNoiseSchedule>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(make_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(extract_f0, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(vuv_error, m)?)?;
    m.add_function(wrap_pyfunction!(stft_distance, m)?)?;
    Ok(())
}
