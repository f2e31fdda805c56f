//! Segment-wise training loops for the proposed and baseline models.
//!
//! Songs are cut into fixed chunks of `segment_frames` frames (the last
//! chunk of a song is shorter and gets edge-padded to the network's length
//! multiple). Each chunk is one Adam step, chunks are visited in a seeded
//! shuffled order, and the loss only covers the chunk's real frames.
//!
//! The proposed model minimises the trajectory NLL against the windowed
//! reference of the whole song, so deltas at chunk edges see the true
//! neighbours. The tied covariance is the identity for the first
//! `covariance_warmup` epochs and is re-estimated from the epoch's residuals
//! at the end of every later epoch. Starting the re-estimation from an
//! untrained network gives delta variances so small that the loss rewards
//! flat output over fitting the statics. Each step's gradient is
//! divided by the mean precision of the current covariance: the update
//! shrinks the delta variances by orders of magnitude, and the unscaled jump
//! outruns Adam's second-moment estimate. The baseline minimises
//! the squared error against the normalized windowed targets and keeps the
//! residual variance of its last epoch for MLPG.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{apply_windows, WindowSet};
use crate::generate::TrainedModel;
use crate::matrix::Matrix;
use crate::model::{frame_to_state, Architecture, DriveMode, Input, ModelConfig, Network};
use crate::nn::{adam_step, AdamConfig, ParameterStore};
use crate::score::{fit_normalization, NormalizationStats, ScoreFeatures, StateAlignment, INPUT_RANGE, OUTPUT_RANGE};
use crate::trajloss::{evaluate_against_means, update_covariance, ResidualAccumulator, TiedCovariance, VARIANCE_FLOOR};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Chunk length; a multiple of the model's length multiple.
    pub segment_frames: usize,
    pub mode: DriveMode,
    pub variance_floor: f64,
    /// Epochs trained against the identity covariance before the per-epoch
    /// re-estimation starts.
    pub covariance_warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            adam: AdamConfig::default(),
            seed: 1,
            segment_frames: 100,
            mode: DriveMode::Frame,
            variance_floor: VARIANCE_FLOOR,
            covariance_warmup: 10,
        }
    }
}

/// One training song.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a ScoreFeatures,
    pub alignment: &'a StateAlignment,
    /// `T x D` statics in natural units.
    pub acoustic: &'a Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Trajectory NLL per frame (proposed) or mean squared error (baseline),
    /// accumulated over the epoch's updates.
    pub loss: f64,
    pub frames: u64,
    /// Mean of the tied variances after the epoch's update.
    pub mean_variance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    song: usize,
    start: usize,
    end: usize,
}

struct Prepared {
    frames: Vec<Matrix>,
    state_vectors: Vec<Matrix>,
    frame_level: Vec<Matrix>,
    maps: Vec<Vec<usize>>,
    /// Windowed normalized targets, `T x 3D`.
    targets: Vec<Matrix>,
}

/// Fit the input statistics over every frame row of the training songs.
pub fn fit_input_stats(examples: &[Example<'_>]) -> Result<NormalizationStats> {
    fit_normalization(examples.iter().map(|e| &e.features.frames.values), INPUT_RANGE)
}

/// Output statistics: over the statics for the proposed model, over the
/// windowed statics for the baseline.
pub fn fit_output_stats(examples: &[Example<'_>], arch: Architecture, windows: &WindowSet) -> Result<NormalizationStats> {
    match arch {
        Architecture::Proposed => fit_normalization(examples.iter().map(|e| e.acoustic), OUTPUT_RANGE),
        Architecture::Baseline => {
            let o = examples
                .iter()
                .map(|e| apply_windows(e.acoustic, windows))
                .collect::<Result<Vec<_>>>()?;
            fit_normalization(o.iter(), OUTPUT_RANGE)
        }
    }
}

fn prepare(
    examples: &[Example<'_>],
    input_stats: &NormalizationStats,
    output_stats: &NormalizationStats,
    arch: Architecture,
    windows: &WindowSet,
) -> Result<Prepared> {
    let sc = examples[0].features.frames.state_cols;
    let total = input_stats.dim();
    let state_stats = input_stats.select(&(0..sc).collect::<Vec<_>>());
    let frame_stats = input_stats.select(&(sc..total).collect::<Vec<_>>());
    let mut p = Prepared {
        frames: Vec::new(),
        state_vectors: Vec::new(),
        frame_level: Vec::new(),
        maps: Vec::new(),
        targets: Vec::new(),
    };
    for e in examples {
        if e.acoustic.rows() != e.features.frames.frames() {
            return Err(Error::Shape(format!(
                "{} acoustic frames for {} feature frames",
                e.acoustic.rows(),
                e.features.frames.frames()
            )));
        }
        p.frames.push(input_stats.normalize(&e.features.frames.values)?);
        p.state_vectors.push(state_stats.normalize(&e.features.state_vectors)?);
        p.frame_level.push(frame_stats.normalize(&e.features.frame_level)?);
        p.maps.push(frame_to_state(e.alignment));
        p.targets.push(match arch {
            Architecture::Proposed => apply_windows(&output_stats.normalize(e.acoustic)?, windows)?,
            Architecture::Baseline => output_stats.normalize(&apply_windows(e.acoustic, windows)?)?,
        });
    }
    Ok(p)
}

fn chunks(prepared: &Prepared, len: usize) -> Vec<Chunk> {
    let mut out = Vec::new();
    for (song, m) in prepared.frames.iter().enumerate() {
        let mut start = 0;
        while start < m.rows() {
            let end = (start + len).min(m.rows());
            out.push(Chunk { song, start, end });
            start = end;
        }
    }
    out
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Inputs of one chunk in the requested drive mode, padded to `padded`
/// frames by repeating the last frame.
struct ChunkInput {
    frames: Option<Matrix>,
    state_vectors: Matrix,
    frame_level: Matrix,
    map: Vec<usize>,
}

impl ChunkInput {
    fn new(p: &Prepared, c: Chunk, padded: usize, mode: DriveMode) -> Self {
        match mode {
            DriveMode::Frame => Self {
                frames: Some(p.frames[c.song].slice_rows(c.start, c.end).pad_rows_edge(padded)),
                state_vectors: Matrix::zeros(0, 0),
                frame_level: Matrix::zeros(0, 0),
                map: Vec::new(),
            },
            DriveMode::State => {
                let map = &p.maps[c.song];
                let (first, last) = (map[c.start], map[c.end - 1]);
                let mut local: Vec<usize> = map[c.start..c.end].iter().map(|s| s - first).collect();
                local.resize(padded, last - first);
                Self {
                    frames: None,
                    state_vectors: p.state_vectors[c.song].slice_rows(first, last + 1),
                    frame_level: p.frame_level[c.song].slice_rows(c.start, c.end).pad_rows_edge(padded),
                    map: local,
                }
            }
        }
    }

    fn input(&self) -> Input<'_> {
        match &self.frames {
            Some(f) => Input::Frames(f),
            None => Input::States {
                state_vectors: &self.state_vectors,
                frame_to_state: &self.map,
                frame_level: &self.frame_level,
            },
        }
    }
}

/// Train `config` (with inputs/outputs already set) on `examples`.
/// `on_epoch` sees each epoch's log entry as soon as it is final.
pub fn train(
    config: ModelConfig,
    tc: &TrainConfig,
    examples: &[Example<'_>],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let network = Network::new(config)?;
    let arch = network.config.architecture;
    let multiple = network.config.length_multiple();
    if arch == Architecture::Proposed && (tc.segment_frames == 0 || !tc.segment_frames.is_multiple_of(multiple)) {
        return Err(Error::Config(format!(
            "training segment of {} frames is not a positive multiple of {multiple}",
            tc.segment_frames
        )));
    }
    if arch == Architecture::Baseline && tc.mode == DriveMode::State {
        return Err(Error::Config("the baseline is frame-driven only".into()));
    }
    if !(tc.variance_floor > 0.0) {
        return Err(Error::Config(format!("variance floor {} must be positive", tc.variance_floor)));
    }
    let windows = WindowSet::standard();
    let input_stats = fit_input_stats(examples)?;
    if input_stats.dim() != network.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects {}",
            input_stats.dim(),
            network.input_dim()
        )));
    }
    let output_stats = fit_output_stats(examples, arch, &windows)?;
    if examples[0].acoustic.cols() != network.output_dim() {
        return Err(Error::Shape(format!(
            "targets have {} columns, model emits {}",
            examples[0].acoustic.cols(),
            network.output_dim()
        )));
    }
    let prepared = prepare(examples, &input_stats, &output_stats, arch, &windows)?;
    let mut order = chunks(&prepared, tc.segment_frames.max(1));
    let mut store = ParameterStore::new(network.init_params(tc.seed));
    let mut cov = TiedCovariance::identity(windows.len() * network.output_dim());
    cov.floor = tc.variance_floor;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5EED_5A1E);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xD20_9007);
    let mut grad = vec![0.0; network.param_count()];
    let mut log = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = ResidualAccumulator::new(cov.dim());
        let mut loss_sum = 0.0;
        let grad_scale = cov.dim() as f64 / cov.variances.iter().map(|v| 1.0 / v).sum::<f64>();
        for &c in &order {
            let valid = c.end - c.start;
            let padded = match arch {
                Architecture::Proposed => round_up(valid, multiple),
                Architecture::Baseline => valid,
            };
            let ci = ChunkInput::new(&prepared, c, padded, tc.mode);
            let (y, tape) = network.forward_train(&store.params, ci.input(), Some(&mut dropout_rng))?;
            let target = prepared.targets[c.song].slice_rows(c.start, c.end);
            let mut d_out = Matrix::zeros(padded, network.output_channels());
            match arch {
                Architecture::Proposed => {
                    let eval = evaluate_against_means(&y.slice_rows(0, valid), &target, &windows, &cov)?;
                    loss_sum += eval.loss;
                    acc.add(&eval.residual)?;
                    for (d, g) in d_out.as_mut_slice().iter_mut().zip(eval.gradient.as_slice()) {
                        *d = g * grad_scale;
                    }
                }
                Architecture::Baseline => {
                    let mut residual = target.clone();
                    for (i, (r, yv)) in residual.as_mut_slice().iter_mut().zip(y.as_slice()).enumerate() {
                        *r -= yv;
                        loss_sum += *r * *r;
                        d_out.as_mut_slice()[i] = -*r;
                    }
                    acc.add(&residual)?;
                }
            }
            grad.fill(0.0);
            network.backward(&store.params, &tape, &d_out, &mut grad)?;
            adam_step(&mut store, &grad, &tc.adam)?;
        }
        if !store.params.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let loss = match arch {
            Architecture::Proposed => loss_sum / acc.frames as f64,
            Architecture::Baseline => loss_sum / (acc.frames as f64 * cov.dim() as f64),
        };
        if epoch > tc.covariance_warmup || arch == Architecture::Baseline {
            cov = update_covariance(&acc, tc.variance_floor)?;
        }
        let entry = EpochLog {
            epoch,
            loss,
            frames: acc.frames,
            mean_variance: cov.variances.iter().sum::<f64>() / cov.dim() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let model = TrainedModel::new(network, store.params, input_stats, output_stats, cov)?;
    Ok(TrainOutcome { model, log })
}

/// Trajectory NLL per frame of `model` on `examples` with its own
/// covariance, evaluated song by song in frame mode.
pub fn evaluate_nll(model: &TrainedModel, examples: &[Example<'_>]) -> Result<f64> {
    let net = &model.network;
    if net.config.architecture != Architecture::Proposed {
        return Err(Error::Config("trajectory NLL needs a proposed model".into()));
    }
    let d = net.output_dim();
    let stats = model.output_stats.select(&(0..d).collect::<Vec<_>>());
    let mut total = 0.0;
    let mut frames = 0usize;
    for e in examples {
        let inputs = model.normalize_inputs(e.features, e.alignment)?;
        let y = model.proposed_normalized(&inputs, crate::generate::SynthesisMode::ProposedFrame)?;
        let target = apply_windows(&stats.normalize(e.acoustic)?, &model.windows)?;
        total += evaluate_against_means(&y, &target, &model.windows, &model.covariance)?.loss;
        frames += y.rows();
    }
    Ok(total / frames.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig, Song};
    use crate::score::{score_features, ContextConfig, POSITION_FEATURES};
    use crate::vocoder::AcousticLayout;

    fn tiny() -> (CorpusConfig, Vec<Song>, Vec<ScoreFeatures>) {
        let cfg = CorpusConfig {
            songs: 3,
            test_songs: 1,
            notes_per_song: 4,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let feats = corpus
            .songs
            .iter()
            .map(|s| score_features(&s.score, &s.alignment, &cfg.context).unwrap())
            .collect();
        (cfg, corpus.songs, feats)
    }

    fn examples<'a>(songs: &'a [Song], feats: &'a [ScoreFeatures]) -> Vec<Example<'a>> {
        songs
            .iter()
            .zip(feats)
            .map(|(s, f)| Example {
                features: f,
                alignment: &s.alignment,
                acoustic: &s.acoustic,
            })
            .collect()
    }

    fn model_cfg(base: ModelConfig, ctx: &ContextConfig) -> ModelConfig {
        let mut c = base;
        c.channels = 8;
        c.residual_blocks = 1;
        c.ffnn_width = 16;
        c.split = None;
        c.with_io(ctx.dim(), 1 + POSITION_FEATURES, AcousticLayout::default().names())
    }

    #[test]
    fn zero_epochs_keeps_initial_weights() {
        let (cfg, songs, feats) = tiny();
        let ex = examples(&songs, &feats);
        let mc = model_cfg(ModelConfig::small(), &cfg.context);
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(mc.clone(), &tc, &ex, |_| {}).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.model.params, Network::new(mc).unwrap().init_params(tc.seed));
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let (cfg, songs, feats) = tiny();
        let ex = examples(&songs, &feats);
        let tc = TrainConfig {
            epochs: 4,
            covariance_warmup: 1,
            ..TrainConfig::default()
        };
        for mode in [DriveMode::Frame, DriveMode::State] {
            let tc = TrainConfig { mode, ..tc };
            let mc = model_cfg(ModelConfig::small(), &cfg.context);
            let a = train(mc.clone(), &tc, &ex, |_| {}).unwrap();
            let b = train(mc, &tc, &ex, |_| {}).unwrap();
            assert_eq!(a.model.params, b.model.params);
            assert!(a.log.last().unwrap().loss < a.log[0].loss, "{:?}", a.log);
            assert!(evaluate_nll(&a.model, &ex).unwrap().is_finite());
        }
    }

    #[test]
    fn frame_and_state_mode_take_identical_steps() {
        // without dropout both drives compute the same function
        let (cfg, songs, feats) = tiny();
        let ex = examples(&songs, &feats);
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let mc = model_cfg(ModelConfig::small(), &cfg.context);
        let a = train(mc.clone(), &tc, &ex, |_| {}).unwrap();
        let b = train(mc, &TrainConfig { mode: DriveMode::State, ..tc }, &ex, |_| {}).unwrap();
        let diff = a.model.params.iter().zip(&b.model.params).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn baseline_trains() {
        let (cfg, songs, feats) = tiny();
        let ex = examples(&songs, &feats);
        let mc = model_cfg(ModelConfig::baseline(), &cfg.context);
        let tc = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(mc, &tc, &ex, |_| {}).unwrap();
        assert!(out.log[2].loss < out.log[0].loss);
        assert_eq!(out.model.covariance.dim(), 3 * AcousticLayout::default().dim());
        let state = train(
            model_cfg(ModelConfig::baseline(), &cfg.context),
            &TrainConfig { mode: DriveMode::State, ..tc },
            &ex,
            |_| {},
        );
        assert!(matches!(state, Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_segment_length() {
        let (cfg, songs, feats) = tiny();
        let ex = examples(&songs, &feats);
        let tc = TrainConfig {
            segment_frames: 202,
            ..TrainConfig::default()
        };
        let r = train(model_cfg(ModelConfig::small(), &cfg.context), &tc, &ex, |_| {});
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
