//! Command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cnnsvs_core::corpus::{generate_corpus, nominal_alignment, CorpusConfig};
use cnnsvs_core::dynamics::WindowSet;
use cnnsvs_core::generate::{SynthesisMode, TrainedModel};
use cnnsvs_core::matrix::Matrix;
use cnnsvs_core::mlpg::{generate, GaussianSequence};
use cnnsvs_core::model::{Architecture, DriveMode, ModelConfig, Network};
use cnnsvs_core::score::{parse_score, score_features, NormalizationStats, ScoreFeatures, StateAlignment, POSITION_FEATURES};
use cnnsvs_core::train::{train, Example, TrainConfig};
use cnnsvs_core::trajloss::TiedCovariance;
use cnnsvs_core::vocoder::{render, AcousticSequence, MlsaConfig};

use crate::align::parse_alignment;
use crate::atomic::write_atomic;
use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::corpus_io::{load_corpus, write_corpus, Manifest, Split};
use crate::features::{read_features, write_features, FeatureFile};
use crate::synth::{default_mode, synthesize};
use crate::wav::write_wav;

pub const THREADS_ENV: &str = "SVS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cnnsvs", version, about = "CNN-based singing voice acoustic modeling")]
pub struct Cli {
    /// Worker threads for per-song and per-segment parallelism (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: scores, alignments, features, manifest.
    GenCorpus(GenCorpusArgs),
    /// Print frame and state totals of a corpus.
    Stats(StatsArgs),
    /// Train a model on the training split and write a checkpoint.
    Train(TrainArgs),
    /// Synthesize acoustic features and a waveform from a score.
    Synth(SynthArgs),
    /// Run parameter generation on a static+dynamic feature file.
    MlpgRun(MlpgArgs),
    /// Report MACs, wall time and FFNN invocations, frame vs state mode.
    Bench(BenchArgs),
    /// Print one channel of a feature file as `frame<TAB>value` lines.
    DumpTraj(DumpArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus configuration (TOML); defaults to the built-in corpus.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub songs: Option<usize>,
    #[arg(long)]
    pub test_songs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Frame,
    State,
}

impl From<ModeArg> for DriveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Frame => DriveMode::Frame,
            ModeArg::State => DriveMode::State,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Model configuration (TOML); overrides --preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// small, medium, large or baseline.
    #[arg(long, default_value = "medium")]
    pub preset: String,
    /// Training options (TOML); the flags below override it.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Per-epoch log (TSV); defaults to the checkpoint path with `.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// How F is driven during training [default: frame]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Training chunk length in frames [default: 100]
    #[arg(long)]
    pub segment: Option<usize>,
    /// Synthesis segment length stored in the checkpoint [default: 2000]
    #[arg(long)]
    pub synth_segment: Option<usize>,
    /// Synthesis cross-fade overlap stored in the checkpoint [default: 100]
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Epochs trained against unit variances [default: 10]
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthModeArg {
    ProposedFrame,
    ProposedState,
    BaselineMlpg,
}

impl From<SynthModeArg> for SynthesisMode {
    fn from(m: SynthModeArg) -> Self {
        match m {
            SynthModeArg::ProposedFrame => SynthesisMode::ProposedFrame,
            SynthModeArg::ProposedState => SynthesisMode::ProposedState,
            SynthModeArg::BaselineMlpg => SynthesisMode::BaselineMlpg,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub score: PathBuf,
    /// State alignment; defaults to the nominal (jitter-free) alignment.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    /// Feature file to write.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// WAV file to write.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Defaults to the mode the checkpoint was trained for.
    #[arg(long, value_enum)]
    pub mode: Option<SynthModeArg>,
    #[arg(long, default_value_t = 16000, value_parser = parse_rate)]
    pub sample_rate: u32,
    /// Noise seed of the excitation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub segment: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Add the vibrato channels to lf0 before rendering.
    #[arg(long)]
    pub vibrato: bool,
}

fn parse_rate(s: &str) -> std::result::Result<u32, String> {
    match s {
        "16000" => Ok(16000),
        "48000" => Ok(48000),
        _ => Err(format!("`{s}` is not 16000 or 48000")),
    }
}

#[derive(Debug, Args)]
pub struct MlpgArgs {
    /// Means: statics `x`, then `x_d` and `x_dd` for every static `x`.
    #[arg(long)]
    pub input: PathBuf,
    /// Variances with the same channels; unit variances if omitted.
    #[arg(long)]
    pub variances: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Corpus whose frame and state counts drive the MAC figures; the
    /// default corpus is generated in memory if omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoints to benchmark; the small, medium and large presets with
    /// initial weights if omitted.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Seconds of features per timing run.
    #[arg(long, default_value_t = 10.0)]
    pub seconds: f64,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "mcep0")]
    pub channel: String,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("building the thread pool")?;
    pool.install(|| match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a).map(|m| {
            println!(
                "wrote {} songs, {} frames, {} states to {}",
                m.songs.len(),
                m.total_frames(),
                m.total_states(),
                a.out.display()
            )
        }),
        Command::Stats(a) => cmd_stats(&a).map(|s| print!("{s}")),
        Command::Train(a) => cmd_train(&a, |line| println!("{line}")).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a).map(|r| {
            println!("{} frames, {} samples", r.frames, r.samples)
        }),
        Command::MlpgRun(a) => cmd_mlpg_run(&a).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a).map(|t| print!("{t}")),
        Command::DumpTraj(a) => cmd_dump_traj(&a).map(|s| {
            if a.out.is_none() {
                print!("{s}")
            }
        }),
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<Manifest> {
    let mut cfg: CorpusConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.songs {
        cfg.songs = n;
    }
    if let Some(n) = a.test_songs {
        cfg.test_songs = n;
    }
    write_corpus(&a.out, &cfg)
}

pub fn cmd_stats(a: &StatsArgs) -> Result<String> {
    let m = Manifest::read(&a.corpus)?;
    let mut s = String::new();
    let _ = writeln!(s, "split\tsongs\tframes\tstates\tframes_per_state");
    for (name, split) in [("train", Some(Split::Train)), ("test", Some(Split::Test)), ("all", None)] {
        let songs: Vec<_> = m.songs.iter().filter(|e| split.is_none_or(|x| e.split == x)).collect();
        let frames: usize = songs.iter().map(|e| e.frames).sum();
        let states: usize = songs.iter().map(|e| e.states).sum();
        let ratio = if states > 0 { frames as f64 / states as f64 } else { 0.0 };
        let _ = writeln!(s, "{name}\t{}\t{frames}\t{states}\t{ratio:.3}", songs.len());
    }
    Ok(s)
}

/// Model configuration with input and output sizes filled in from the corpus.
pub fn resolve_model_config(base: ModelConfig, corpus: &CorpusConfig) -> ModelConfig {
    base.with_io(corpus.context.dim(), 1 + POSITION_FEATURES, corpus.layout.names())
}

pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub log: String,
}

pub fn cmd_train(a: &TrainArgs, mut progress: impl FnMut(&str)) -> Result<TrainReport> {
    let corpus = load_corpus(&a.corpus)?;
    let ccfg = &corpus.manifest.config;
    let base = match &a.config {
        Some(p) => read_toml(p)?,
        None => ModelConfig::preset_by_name(&a.preset)?,
    };
    let mut mc = resolve_model_config(base, ccfg);
    if let Some(n) = a.synth_segment {
        mc.segment_frames = n;
    }
    if let Some(n) = a.overlap {
        mc.overlap_frames = n;
    }
    let mut tc: TrainConfig = match &a.train_config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.lr {
        tc.adam.lr = v;
    }
    if let Some(v) = a.mode {
        tc.mode = v.into();
    }
    if let Some(v) = a.segment {
        tc.segment_frames = v;
    }
    if let Some(v) = a.warmup {
        tc.covariance_warmup = v;
    }
    mc.mode = tc.mode;
    Network::new(mc.clone()).context("invalid model configuration")?;

    let train_songs: Vec<_> = corpus.split(Split::Train).collect();
    ensure!(!train_songs.is_empty(), "corpus has no training songs");
    let feats = train_songs
        .iter()
        .map(|s| score_features(&s.score, &s.alignment, &ccfg.context))
        .collect::<cnnsvs_core::Result<Vec<_>>>()?;
    let examples: Vec<Example<'_>> = train_songs
        .iter()
        .zip(&feats)
        .map(|(s, f)| Example {
            features: f,
            alignment: &s.alignment,
            acoustic: &s.acoustic,
        })
        .collect();

    let what = match mc.architecture {
        Architecture::Proposed => "nll_per_frame",
        Architecture::Baseline => "mse",
    };
    let mut log = format!("epoch\t{what}\tframes\tmean_variance\n");
    let started = Instant::now();
    let outcome = train(mc, &tc, &examples, |e| {
        let line = format!("{}\t{:.6}\t{}\t{:.6e}", e.epoch, e.loss, e.frames, e.mean_variance);
        log.push_str(&line);
        log.push('\n');
        progress(&format!("{line}\t{:.1}s", started.elapsed().as_secs_f64()));
    })?;
    let checkpoint = Checkpoint {
        model: outcome.model,
        corpus: ccfg.clone(),
        train: Some(tc),
    };
    write_checkpoint(&a.out, &checkpoint)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.tsv"));
    write_atomic(&log_path, log.as_bytes())?;
    Ok(TrainReport { checkpoint, log })
}

/// Score, alignment and features for synthesis.
pub fn prepare_score(
    ckpt: &Checkpoint,
    score_path: &Path,
    align_path: Option<&Path>,
) -> Result<(cnnsvs_core::score::Score, StateAlignment, ScoreFeatures)> {
    let score = parse_score(&fs::read_to_string(score_path).with_context(|| format!("reading {}", score_path.display()))?)
        .with_context(|| format!("parsing {}", score_path.display()))?;
    let align = match align_path {
        Some(p) => parse_alignment(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => nominal_alignment(&score, &ckpt.corpus)?,
    };
    align.check_covers(&score)?;
    if align.states_per_phoneme != ckpt.corpus.context.states_per_phoneme {
        bail!(
            "alignment has {} states per phoneme, model expects {}",
            align.states_per_phoneme,
            ckpt.corpus.context.states_per_phoneme
        );
    }
    if (align.frame_shift - ckpt.corpus.frame_shift).abs() > 1e-12 {
        bail!(
            "alignment frame shift {} differs from the model's {}",
            align.frame_shift,
            ckpt.corpus.frame_shift
        );
    }
    let feats = score_features(&score, &align, &ckpt.corpus.context)?;
    Ok((score, align, feats))
}

pub struct SynthReport {
    pub frames: usize,
    pub samples: usize,
    pub acoustic: Matrix,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<SynthReport> {
    ensure!(a.features.is_some() || a.wav.is_some(), "nothing to write: pass --features and/or --wav");
    let mut ckpt = read_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    {
        let c = &mut ckpt.model.network.config;
        if let Some(n) = a.segment {
            c.segment_frames = n;
        }
        if let Some(n) = a.overlap {
            c.overlap_frames = n;
        }
        c.validate()?;
    }
    let (_, align, feats) = prepare_score(&ckpt, &a.score, a.alignment.as_deref())?;
    let mode = a.mode.map(SynthesisMode::from).unwrap_or_else(|| default_mode(&ckpt.model));
    let acoustic = synthesize(&ckpt.model, &feats, &align, mode)?;
    let layout = ckpt.corpus.layout;
    let shift = ckpt.corpus.frame_shift;
    let mut samples = 0;
    if let Some(wav) = &a.wav {
        let seq = AcousticSequence::new(layout, acoustic.clone(), shift, a.sample_rate)?;
        let cfg = MlsaConfig::for_rate(a.sample_rate, shift)?;
        let y = render(&seq, &cfg, a.seed, a.vibrato)?;
        samples = y.len();
        write_wav(wav, &y, a.sample_rate)?;
    }
    if let Some(p) = &a.features {
        write_features(p, &FeatureFile::from_matrix(layout.names(), &acoustic, shift, a.sample_rate)?)?;
    }
    Ok(SynthReport {
        frames: acoustic.rows(),
        samples,
        acoustic,
    })
}

/// Static channel names of a `x.., x_d.., x_dd..` layout.
pub fn static_names(names: &[String]) -> Result<Vec<String>> {
    ensure!(
        !names.is_empty() && names.len().is_multiple_of(3),
        "expected 3 x D channels, found {}",
        names.len()
    );
    let d = names.len() / 3;
    let statics = names[..d].to_vec();
    for (i, s) in statics.iter().enumerate() {
        ensure!(
            names[d + i] == format!("{s}_d") && names[2 * d + i] == format!("{s}_dd"),
            "channel {s} needs `{s}_d` at {} and `{s}_dd` at {}",
            d + i,
            2 * d + i
        );
    }
    Ok(statics)
}

pub fn cmd_mlpg_run(a: &MlpgArgs) -> Result<Matrix> {
    let input = read_features(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let statics = static_names(&input.names)?;
    let means = input.to_matrix();
    let variances = match &a.variances {
        Some(p) => {
            let v = read_features(p).with_context(|| format!("reading {}", p.display()))?;
            ensure!(
                v.names == input.names && v.frames == input.frames,
                "variance file does not match the means in shape or channel names"
            );
            v.to_matrix()
        }
        None => Matrix::from_vec(means.rows(), means.cols(), vec![1.0; means.rows() * means.cols()])?,
    };
    let seq = GaussianSequence::new(means, variances)?;
    let out = generate(&seq, &WindowSet::standard())?;
    write_features(
        &a.out,
        &FeatureFile::from_matrix(statics, &out, input.frame_shift, input.sample_rate)?,
    )?;
    Ok(out)
}

pub fn cmd_dump_traj(a: &DumpArgs) -> Result<String> {
    let f = read_features(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let values = f.channel(&a.channel)?;
    let mut s = String::with_capacity(values.len() * 12);
    for (t, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{t}\t{v}");
    }
    if let Some(p) = &a.out {
        write_atomic(p, s.as_bytes())?;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: String,
    pub mode: DriveMode,
    pub ffnn_macs: u64,
    pub cnn_macs: u64,
    /// Seconds of wall time per second of synthesized features.
    pub time_per_second: f64,
    pub ffnn_invocations: u64,
    pub frames: usize,
    pub states: usize,
    /// CNN1 alone, when the configuration splits its outputs.
    pub cnn1_macs: u64,
}

impl BenchRow {
    pub fn total(&self) -> u64 {
        self.ffnn_macs + self.cnn_macs
    }
}

/// MAC reduction of state mode relative to frame mode.
pub fn reduction(frame: &BenchRow, state: &BenchRow) -> f64 {
    1.0 - state.total() as f64 / frame.total() as f64
}

/// Untrained model for a preset, sized for `corpus`.
pub fn preset_model(name: &str, corpus: &CorpusConfig, seed: u64) -> Result<TrainedModel> {
    let mc = resolve_model_config(ModelConfig::preset_by_name(name)?, corpus);
    let network = Network::new(mc)?;
    let params = network.init_params(seed);
    let input_dim = network.input_dim();
    let out = network.output_channels();
    let d = network.output_dim();
    let unit = |n: usize, lo: f64, hi: f64| NormalizationStats {
        min: vec![0.0; n],
        max: vec![1.0; n],
        lo,
        hi,
    };
    Ok(TrainedModel::new(
        network,
        params,
        unit(input_dim, 0.0, 1.0),
        unit(out, 0.01, 0.99),
        TiedCovariance::identity(3 * d),
    )?)
}

pub fn bench_rows(
    models: &[(String, TrainedModel, CorpusConfig)],
    counts: &[(usize, usize)],
    seconds: f64,
) -> Result<Vec<BenchRow>> {
    let (frames, states) = counts.iter().fold((0, 0), |(f, s), &(a, b)| (f + a, s + b));
    ensure!(frames > 0, "no frames to benchmark on");
    let mut rows = Vec::new();
    for (name, model, ccfg) in models {
        ensure!(
            model.network.config.architecture == Architecture::Proposed,
            "{name}: only the proposed architecture has frame and state modes"
        );
        // Time a fixed-length synthetic score under the same context layout.
        let timing = timing_input(ccfg, seconds)?;
        for mode in [DriveMode::Frame, DriveMode::State] {
            let macs = model.network.macs(frames, states, mode);
            let smode = match mode {
                DriveMode::Frame => SynthesisMode::ProposedFrame,
                DriveMode::State => SynthesisMode::ProposedState,
            };
            model.network.reset_invocations();
            let t0 = Instant::now();
            let y = synthesize(model, &timing.1, &timing.0, smode)?;
            let elapsed = t0.elapsed().as_secs_f64();
            let synth_seconds = y.rows() as f64 * ccfg.frame_shift;
            rows.push(BenchRow {
                config: name.clone(),
                mode,
                ffnn_macs: macs.ffnn,
                cnn_macs: macs.cnn,
                time_per_second: elapsed / synth_seconds,
                ffnn_invocations: model.network.ffnn_invocations(),
                frames: y.rows(),
                states: timing.0.entries.len(),
                cnn1_macs: model.network.cnn1_macs(frames),
            });
        }
    }
    Ok(rows)
}

fn timing_input(ccfg: &CorpusConfig, seconds: f64) -> Result<(StateAlignment, ScoreFeatures)> {
    let mut cfg = ccfg.clone();
    cfg.songs = 1;
    cfg.test_songs = 0;
    let mut song = generate_corpus(&cfg)?.songs.remove(0);
    let want = (seconds / cfg.frame_shift).round().max(1.0) as usize;
    // Repeat the song's notes until the score is long enough.
    let notes = song.score.notes.clone();
    while (song.score.total_seconds() / cfg.frame_shift) < want as f64 {
        song.score.notes.extend(notes.iter().cloned());
    }
    let align = nominal_alignment(&song.score, &cfg)?;
    let feats = score_features(&song.score, &align, &cfg.context)?;
    Ok((align, feats))
}

pub fn format_bench(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "config\tmode\tffnn_macs\tcnn_macs\ttotal_macs\treduction\tffnn_invocations\ttiming_frames\ttiming_states\tsec_per_sec\tcnn1_macs"
    );
    for r in rows {
        let frame = rows.iter().find(|x| x.config == r.config && x.mode == DriveMode::Frame);
        let red = frame.map_or(0.0, |f| reduction(f, r));
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.1}%\t{}\t{}\t{}\t{:.4}\t{}",
            r.config,
            match r.mode {
                DriveMode::Frame => "frame",
                DriveMode::State => "state",
            },
            r.ffnn_macs,
            r.cnn_macs,
            r.total(),
            100.0 * red,
            r.ffnn_invocations,
            r.frames,
            r.states,
            r.time_per_second,
            r.cnn1_macs
        );
    }
    s
}

pub fn cmd_bench(a: &BenchArgs) -> Result<String> {
    let (ccfg, counts) = match &a.corpus {
        Some(dir) => {
            let m = Manifest::read(dir)?;
            let counts: Vec<(usize, usize)> = m.songs.iter().map(|e| (e.frames, e.states)).collect();
            (m.config, counts)
        }
        None => {
            let cfg = CorpusConfig::default();
            let c = generate_corpus(&cfg)?;
            let counts: Vec<(usize, usize)> = c.songs.iter().map(|s| (s.acoustic.rows(), s.alignment.entries.len())).collect();
            (cfg, counts)
        }
    };
    let models = if a.checkpoint.is_empty() {
        ["small", "medium", "large"]
            .iter()
            .map(|n| Ok((n.to_string(), preset_model(n, &ccfg, 1)?, ccfg.clone())))
            .collect::<Result<Vec<_>>>()?
    } else {
        a.checkpoint
            .iter()
            .map(|p| {
                let c = read_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
                Ok((c.model.network.config.name.clone(), c.model, c.corpus))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let table = format_bench(&bench_rows(&models, &counts, a.seconds)?);
    if let Some(p) = &a.out {
        write_atomic(p, table.as_bytes())?;
    }
    Ok(table)
}
