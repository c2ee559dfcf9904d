use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use periodgrad::dsp::{NormStats, Waveform};
use periodgrad::engine::{
    extract_entry, load_checkpoint, load_entry, make_toy_corpus, read_manifest, save_checkpoint, Checkpoint,
    CorpusEntry, Mode, Trainer, TrainingUtterance,
};
use periodgrad::features::AcousticFeatureSeq;
use periodgrad::io::{load_matrix, load_wav, save_matrix, save_wav};
use periodgrad::metrics::{
    compare, shift_sweep, summarize, write_report_csv, CheckpointGenerator, Generator, OracleGenerator, PitchReport,
    SweepItem,
};
use periodgrad::periodic::regenerate_for_shift;
use periodgrad::pitch::extract_f0;
use periodgrad::Error;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{Cli, Command, EvalArgs, ExtractArgs, MakeCorpusArgs, Selection, ShiftArgs, SynthArgs, TrainArgs};

/// Command failure with its exit code: 2 for usage, configuration and mode
/// errors, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ModeMismatch(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(cli: Cli) -> Outcome {
    let config = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let jobs = match cli.jobs {
        Some(0) => return Err(usage("--jobs must be >= 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    match cli.command {
        Command::MakeCorpus(a) => make_corpus(config, a),
        Command::Extract(a) => extract(config, a),
        Command::Train(a) => train(config, a, jobs),
        Command::Synth(a) => synth(config, a),
        Command::Shift(a) => shift(config, a),
        Command::Eval(a) => eval(config, a, jobs),
    }
}

fn make_corpus(mut config: RunConfig, a: MakeCorpusArgs) -> Outcome {
    let c = &mut config.corpus;
    c.n_utts = a.n.unwrap_or(c.n_utts);
    c.seconds = a.seconds.unwrap_or(c.seconds);
    c.f0_min = a.f0_min.unwrap_or(c.f0_min);
    c.f0_max = a.f0_max.unwrap_or(c.f0_max);
    config.validate()?;
    if config.corpus.n_utts == 0 {
        return Err(usage("--n must be >= 1"));
    }
    let start = Instant::now();
    let entries = make_toy_corpus(&config.corpus, &a.out)?;
    println!(
        "wrote {} utterances to {} ({:.1} s)",
        entries.len(),
        a.out.join("manifest.tsv").display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn stats_path(config: &RunConfig, explicit: Option<PathBuf>, manifest: &Path) -> PathBuf {
    explicit
        .or_else(|| config.paths.stats.clone())
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("stats.pgf"))
}

fn manifest_path(config: &RunConfig, explicit: &Option<PathBuf>) -> Outcome<PathBuf> {
    explicit
        .clone()
        .or_else(|| config.paths.manifest.clone())
        .ok_or_else(|| usage("no manifest: pass --manifest or set paths.manifest"))
}

fn prefix_count(requested: Option<usize>, available: usize, flag: &str) -> Outcome<usize> {
    match requested {
        Some(0) => Err(usage(format!("{flag} must be >= 1"))),
        Some(n) if n > available => Err(usage(format!("{flag} {n} exceeds the {available} manifest rows"))),
        Some(n) => Ok(n),
        None if available == 0 => Err(usage("manifest is empty")),
        None => Ok(available),
    }
}

fn extract(config: RunConfig, a: ExtractArgs) -> Outcome {
    config.validate()?;
    let manifest = manifest_path(&config, &a.manifest)?;
    let entries = read_manifest(&manifest)?;
    let n_stats = prefix_count(a.train_count, entries.len(), "--train-count")?;
    let start = Instant::now();
    let features: Vec<AcousticFeatureSeq> = entries
        .par_iter()
        .map(|e| extract_entry(e, &config.dsp, &config.pitch))
        .collect::<Result<_, _>>()?;
    let stats = NormStats::compute(features[..n_stats].iter().map(|f| f.raw()))?;
    let path = stats_path(&config, a.out, &manifest);
    save_matrix(&stats.to_matrix(), &path)?;
    let frames: usize = features.iter().map(|f| f.frames()).sum();
    println!(
        "extracted {} utterances ({frames} frames) in {:.1} s; statistics over {n_stats} -> {}",
        features.len(),
        start.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

fn train(mut config: RunConfig, a: TrainArgs, jobs: usize) -> Outcome {
    let mode: Option<Mode> = match &a.mode {
        Some(m) => Some(m.parse().map_err(Failure::from)?),
        None => None,
    };
    if let Some(m) = mode {
        config.train.mode = m;
    }
    if let Some(s) = a.steps {
        config.train.total_steps = s;
    }
    config.validate()?;
    let manifest = manifest_path(&config, &a.manifest)?;
    let entries = read_manifest(&manifest)?;
    let n_train = prefix_count(a.train_count, entries.len(), "--train-count")?;

    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if let Some(m) = mode {
                if m != ckpt.train.mode {
                    return Err(Error::ModeMismatch(format!(
                        "--mode {} but {} was trained as {}",
                        m.as_str(),
                        path.display(),
                        ckpt.train.mode.as_str()
                    ))
                    .into());
                }
            }
            let mut t = Trainer::from_checkpoint(ckpt)?;
            if let Some(s) = a.steps {
                t.config.total_steps = s;
            }
            t
        }
        None => {
            let stats = NormStats::from_matrix(&load_matrix(stats_path(&config, a.stats.clone(), &manifest))?)?;
            Trainer::new(config.train.clone(), &config.network, config.dsp.clone(), config.pitch, stats)?
        }
    };
    trainer.set_threads(jobs);

    let data: Vec<TrainingUtterance> = entries[..n_train]
        .par_iter()
        .map(|e| {
            let u = load_entry(e, &trainer.dsp)?;
            trainer.prepare(&u.wave, &u.features, &u.f0)
        })
        .collect::<Result<_, _>>()?;

    fs::create_dir_all(&a.out)?;
    let ckpt_path = a.out.join("checkpoint.ckpt");
    let mut loss_log = open_loss_log(&a.out.join("loss.csv"), trainer.step)?;
    let total = trainer.config.total_steps;
    info!(
        "training {} on {n_train} utterances: step {} -> {total}, {} parameters",
        trainer.mode().as_str(),
        trainer.step,
        periodgrad::network::count_params(&trainer.params.config)
    );
    let start = Instant::now();
    let first = trainer.step;
    let mut window = 0.0;
    while trainer.step < total {
        let loss = trainer.train_step(&data)?;
        writeln!(loss_log, "{},{loss}", trainer.step)?;
        window += loss;
        if trainer.step % config.run.log_every == 0 {
            let done = (trainer.step - first) as f64;
            let rate = start.elapsed().as_secs_f64() / done;
            info!(
                "step {} loss {:.5} ({:.3} s/step, eta {:.0} s)",
                trainer.step,
                window / config.run.log_every as f64,
                rate,
                rate * (total - trainer.step) as f64
            );
            window = 0.0;
        }
        if trainer.step % config.run.checkpoint_every == 0 {
            loss_log.flush()?;
            save_checkpoint(&trainer.to_checkpoint(), &ckpt_path)?;
        }
    }
    loss_log.flush()?;
    save_checkpoint(&trainer.to_checkpoint(), &ckpt_path)?;
    println!(
        "trained {} to step {total} in {:.1} s -> {}",
        trainer.mode().as_str(),
        start.elapsed().as_secs_f64(),
        ckpt_path.display()
    );
    Ok(())
}

/// Opens `loss.csv` for appending, keeping only rows up to `step` so a
/// resumed run continues the curve without duplicates.
fn open_loss_log(path: &Path, step: u64) -> Outcome<std::io::BufWriter<fs::File>> {
    let mut kept = String::from("step,loss\n");
    if step > 0 {
        if let Ok(old) = fs::read_to_string(path) {
            for line in old.lines().skip(1) {
                let s: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
                if s.is_some_and(|s| s <= step) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    fs::write(path, kept)?;
    let f = fs::OpenOptions::new().append(true).open(path)?;
    Ok(std::io::BufWriter::new(f))
}

/// Manifest rows `[from, from + count)` with their global indices, which
/// also select each utterance's noise stream.
fn select(config: &RunConfig, s: &Selection) -> Outcome<Vec<(usize, CorpusEntry)>> {
    let entries = read_manifest(&manifest_path(config, &s.manifest)?)?;
    if s.from >= entries.len() {
        return Err(usage(format!("--from {} but the manifest has {} rows", s.from, entries.len())));
    }
    let end = match s.count {
        Some(0) => return Err(usage("--count must be >= 1")),
        Some(c) => (s.from + c).min(entries.len()),
        None => entries.len(),
    };
    Ok(entries.into_iter().enumerate().skip(s.from).take(end - s.from).collect())
}

/// Output suffix for a shift: `0`, `p3`, `m3`, `p1.5`.
pub fn shift_suffix(semitones: f64) -> String {
    if semitones == 0.0 {
        "0".into()
    } else if semitones > 0.0 {
        format!("p{semitones}")
    } else {
        format!("m{}", -semitones)
    }
}

fn load_features(entry: &CorpusEntry, n_mels: usize) -> Outcome<AcousticFeatureSeq> {
    Ok(AcousticFeatureSeq::new(load_matrix(&entry.features)?, n_mels)?)
}

fn generate_shifted(
    generator: &dyn Generator,
    ckpt: &Checkpoint,
    features: &AcousticFeatureSeq,
    semitones: f64,
    index: usize,
) -> Outcome<Waveform> {
    let hop = ckpt.dsp.hop_length;
    let f0 = features.f0_contour(hop, ckpt.dsp.sample_rate);
    let periodic = regenerate_for_shift(&f0, semitones, features.frames() * hop)?;
    Ok(generator.generate(&features.shifted(semitones), &periodic, index)?)
}

fn render(config: &RunConfig, checkpoint: &Path, select_args: &Selection, shifts: &[f64], out: &Path, suffixed: bool) -> Outcome {
    config.validate()?;
    let ckpt = load_checkpoint(checkpoint)?;
    ckpt.validate()?;
    let items = select(config, select_args)?;
    fs::create_dir_all(out)?;
    let generator = CheckpointGenerator {
        checkpoint: &ckpt,
        options: config.synth_options()?,
        seed: config.seed(),
    };
    let start = Instant::now();
    items.par_iter().try_for_each(|(index, entry)| -> Outcome {
        let features = load_features(entry, ckpt.dsp.n_mels)?;
        for &s in shifts {
            let wave = generate_shifted(&generator, &ckpt, &features, s, *index)?;
            let name = if suffixed {
                format!("{}_{}.wav", entry.name(), shift_suffix(s))
            } else {
                format!("{}.wav", entry.name())
            };
            save_wav(&wave, out.join(name))?;
        }
        Ok(())
    })?;
    println!(
        "synthesized {} files with {} checkpoint (step {}) in {:.1} s -> {}",
        items.len() * shifts.len(),
        ckpt.train.mode.as_str(),
        ckpt.step,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn synth(config: RunConfig, a: SynthArgs) -> Outcome {
    render(&config, &a.checkpoint, &a.select, &[0.0], &a.out, false)
}

fn shift(config: RunConfig, a: ShiftArgs) -> Outcome {
    check_shifts(&a.semitones)?;
    render(&config, &a.checkpoint, &a.select, &a.semitones, &a.out, true)
}

fn check_shifts(shifts: &[f64]) -> Outcome {
    if shifts.is_empty() || shifts.iter().any(|s| !s.is_finite()) {
        return Err(usage("--semitones needs finite values"));
    }
    Ok(())
}

fn eval(config: RunConfig, a: EvalArgs, jobs: usize) -> Outcome {
    check_shifts(&a.semitones)?;
    config.validate()?;
    let ckpt = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let (dsp, pitch) = match &ckpt {
        Some(c) => (c.dsp.clone(), c.pitch),
        None => (config.dsp.clone(), config.pitch),
    };
    if ckpt.is_none() && !a.oracle && a.generated.is_none() && a.semitones.iter().any(|&s| s != 0.0) {
        return Err(usage(
            "scoring references against themselves only supports --semitones 0; pass --checkpoint, --generated or --oracle",
        ));
    }
    let entries = select(&config, &a.select)?;
    let items: Vec<(usize, SweepItem)> = entries
        .par_iter()
        .map(|(i, e)| -> Outcome<(usize, SweepItem)> {
            Ok((
                *i,
                SweepItem {
                    name: e.name(),
                    reference: load_wav(&e.wav)?,
                    features: load_features(e, dsp.n_mels)?,
                },
            ))
        })
        .collect::<Outcome<_>>()?;

    let start = Instant::now();
    let rows: Vec<PitchReport> = if let Some(dir) = &a.generated {
        score_files(&items, &a.semitones, dir, &dsp, &pitch)?
    } else if let Some(c) = &ckpt {
        let generator = CheckpointGenerator {
            checkpoint: c,
            options: config.synth_options()?,
            seed: config.seed(),
        };
        sweep_indexed(&generator, &items, &a.semitones, &dsp, &pitch, jobs)?
    } else if a.oracle {
        sweep_indexed(&OracleGenerator { amplitude: 0.5 }, &items, &a.semitones, &dsp, &pitch, jobs)?
    } else {
        items
            .par_iter()
            .map(|(_, it)| -> Outcome<PitchReport> {
                let f0 = extract_f0(&it.reference, dsp.hop_length, &pitch)?;
                Ok(compare(&f0, &f0, 0.0, &it.name))
            })
            .collect::<Outcome<_>>()?
    };
    let summary = summarize(&rows);
    let mut all = rows;
    all.extend(summary.iter().cloned());
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_report_csv(&all, &a.out)?;
    for s in &summary {
        println!(
            "shift {:+}: F0-RMSE {:.4} semitones, V/UV-ER {:.2}% over {} utterances ({} co-voiced frames)",
            s.shift,
            s.f0_rmse,
            s.vuv_er,
            items.len(),
            s.n_eval_frames
        );
    }
    println!("report -> {} ({:.1} s)", a.out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

/// Runs the sweep so each item keeps its global manifest index, which picks
/// its noise stream independently of the selected range.
fn sweep_indexed(
    generator: &dyn Generator,
    items: &[(usize, SweepItem)],
    shifts: &[f64],
    dsp: &periodgrad::dsp::DspConfig,
    pitch: &periodgrad::pitch::PitchConfig,
    jobs: usize,
) -> Outcome<Vec<PitchReport>> {
    struct Offset<'a> {
        inner: &'a dyn Generator,
        index: Vec<usize>,
    }
    impl Generator for Offset<'_> {
        fn generate(
            &self,
            features: &AcousticFeatureSeq,
            periodic: &periodgrad::periodic::PeriodicSignal,
            local: usize,
        ) -> periodgrad::Result<Waveform> {
            self.inner.generate(features, periodic, self.index[local])
        }
    }
    let wrapped = Offset {
        inner: generator,
        index: items.iter().map(|(i, _)| *i).collect(),
    };
    let plain: Vec<SweepItem> = items.iter().map(|(_, it)| it.clone()).collect();
    Ok(shift_sweep(&wrapped, &plain, shifts, dsp, pitch, jobs)?)
}

/// Scores `<name>_<suffix>.wav` files produced by `shift`.
fn score_files(
    items: &[(usize, SweepItem)],
    shifts: &[f64],
    dir: &Path,
    dsp: &periodgrad::dsp::DspConfig,
    pitch: &periodgrad::pitch::PitchConfig,
) -> Outcome<Vec<PitchReport>> {
    let per_item: Vec<Vec<PitchReport>> = items
        .par_iter()
        .map(|(_, it)| -> Outcome<Vec<PitchReport>> {
            let reference = extract_f0(&it.reference, dsp.hop_length, pitch)?;
            shifts
                .iter()
                .map(|&s| {
                    let path = dir.join(format!("{}_{}.wav", it.name, shift_suffix(s)));
                    let wave = load_wav(&path)?;
                    let generated = extract_f0(&wave, dsp.hop_length, pitch)?;
                    Ok(compare(&reference.shifted(s), &generated, s, &it.name))
                })
                .collect()
        })
        .collect::<Outcome<_>>()?;
    Ok(per_item.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(shift_suffix(0.0), "0");
        assert_eq!(shift_suffix(3.0), "p3");
        assert_eq!(shift_suffix(-3.0), "m3");
        assert_eq!(shift_suffix(1.5), "p1.5");
        assert_eq!(shift_suffix(-0.0), "0");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(Error::ModeMismatch("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(Error::Corrupt("x".into())).exit_code(), 1);
    }
}
