//! Acoustic model architectures.
//!
//! The proposed model is `c = G([F(s_1), ..., F(s_T)] ++ frame-level inputs)`:
//! `F` is a stack of 1x1 convolutions over the state-level context columns,
//! `G` a fully convolutional network over the whole segment (two stride-2
//! down-sampling stages, residual blocks, two transposed up-sampling stages
//! and a sigmoid output). Frame-level inputs (note logF0, positions) bypass
//! `F`, so in state-driven mode `F` runs once per alignment entry and its
//! output is repeated over the entry's frames before `G`.
//!
//! The baseline is a frame-wise FFNN predicting static, Δ and ΔΔ features.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;
use crate::nn::{
    check_dropout, Conv1d, ConvMode, Init, Layer, ParamAllocator, ResidualBlock, SequenceTensor, Stack, Tape,
};
use crate::score::StateAlignment;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Architecture {
    /// FFNN + CNN trained with the trajectory likelihood.
    Proposed,
    /// Frame-wise FFNN predicting static + dynamic features, smoothed by MLPG.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DriveMode {
    /// `F` evaluated at every frame.
    Frame,
    /// `F` evaluated once per alignment entry.
    State,
}

/// A separate small CNN (CNN1) for the listed outputs; the main CNN (CNN2)
/// produces the rest. Both read the same `F` output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitConfig {
    pub outputs: Vec<String>,
    pub channels: usize,
    pub residual_blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    pub name: String,
    pub architecture: Architecture,
    pub mode: DriveMode,
    /// State-level context columns, fed to `F`.
    pub state_inputs: usize,
    /// Frame-level columns appended after `F`.
    pub frame_inputs: usize,
    /// Static output channels, in order.
    pub output_names: Vec<String>,
    pub ffnn_layers: usize,
    pub ffnn_width: usize,
    pub dropout: f64,
    pub channels: usize,
    pub kernel: usize,
    pub down_stages: usize,
    pub up_stages: usize,
    pub residual_blocks: usize,
    pub split: Option<SplitConfig>,
    pub segment_frames: usize,
    pub overlap_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::medium()
    }
}

/// Outputs of the small CNN in the split configuration.
pub const CNN1_OUTPUTS: [&str; 4] = ["mcep0", "lf0", "vib_amp", "vib_freq"];

impl ModelConfig {
    fn preset(name: &str, channels: usize, residual_blocks: usize) -> Self {
        Self {
            name: name.to_string(),
            architecture: Architecture::Proposed,
            mode: DriveMode::Frame,
            state_inputs: 0,
            frame_inputs: 0,
            output_names: Vec::new(),
            ffnn_layers: 3,
            ffnn_width: 64,
            dropout: 0.0,
            channels,
            kernel: 3,
            down_stages: 2,
            up_stages: 2,
            residual_blocks,
            split: None,
            segment_frames: 2000,
            overlap_frames: 100,
        }
    }

    pub fn small() -> Self {
        Self::preset("small", 16, 5)
    }

    pub fn medium() -> Self {
        Self::preset("medium", 32, 9)
    }

    pub fn large() -> Self {
        Self {
            split: Some(SplitConfig {
                outputs: CNN1_OUTPUTS.iter().map(|s| s.to_string()).collect(),
                channels: 16,
                residual_blocks: 5,
            }),
            ..Self::preset("large", 64, 9)
        }
    }

    pub fn baseline() -> Self {
        Self {
            architecture: Architecture::Baseline,
            dropout: 0.2,
            ..Self::preset("baseline", 0, 0)
        }
    }

    pub fn preset_by_name(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "medium" => Ok(Self::medium()),
            "large" => Ok(Self::large()),
            "baseline" => Ok(Self::baseline()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn with_io(mut self, state_inputs: usize, frame_inputs: usize, output_names: Vec<String>) -> Self {
        self.state_inputs = state_inputs;
        self.frame_inputs = frame_inputs;
        self.output_names = output_names;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.output_names.len()
    }

    /// Segment lengths must be divisible by this.
    pub fn length_multiple(&self) -> usize {
        1 << self.down_stages
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.output_names.is_empty() {
            return err("no output channels".into());
        }
        if self.state_inputs == 0 {
            return err("no state-level inputs".into());
        }
        if self.ffnn_layers == 0 || self.ffnn_width == 0 {
            return err("the FFNN part needs at least one layer of positive width".into());
        }
        check_dropout(self.dropout)?;
        if self.architecture == Architecture::Baseline {
            return Ok(());
        }
        if self.down_stages != self.up_stages {
            return err(format!(
                "{} down-sampling stages but {} up-sampling stages",
                self.down_stages, self.up_stages
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return err(format!("filter size {} must be odd", self.kernel));
        }
        if self.channels == 0 {
            return err("CNN channel count must be positive".into());
        }
        if self.segment_frames == 0 || !self.segment_frames.is_multiple_of(self.length_multiple()) {
            return err(format!(
                "segment length {} must be a positive multiple of {}",
                self.segment_frames,
                self.length_multiple()
            ));
        }
        if 2 * self.overlap_frames > self.segment_frames {
            return err(format!(
                "overlap {} exceeds half the segment length {}",
                self.overlap_frames, self.segment_frames
            ));
        }
        if let Some(split) = &self.split {
            if split.channels == 0 {
                return err("CNN1 channel count must be positive".into());
            }
            for name in &split.outputs {
                if !self.output_names.contains(name) {
                    return err(format!("CNN1 output '{name}' is not an output channel"));
                }
            }
            if split.outputs.is_empty() || split.outputs.len() >= self.output_dim() {
                return err("CNN1 and CNN2 must each produce at least one output".into());
            }
        }
        Ok(())
    }
}

/// One CNN stack and the output channels it writes.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub stack: Stack,
    pub outputs: Vec<usize>,
}

/// Multiply-accumulate counts of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacReport {
    pub ffnn: u64,
    pub cnn: u64,
}

impl MacReport {
    pub fn total(&self) -> u64 {
        self.ffnn + self.cnn
    }
}

/// Layer structure built from a [`ModelConfig`]; parameters are kept
/// separately as one flat vector.
#[derive(Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub ffnn: Stack,
    pub heads: Vec<Head>,
    param_count: usize,
    invocations: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            ffnn: self.ffnn.clone(),
            heads: self.heads.clone(),
            param_count: self.param_count,
            invocations: AtomicU64::new(self.ffnn_invocations()),
        }
    }
}

fn ffnn_layers(
    alloc: &mut ParamAllocator,
    cin: usize,
    width: usize,
    count: usize,
    dropout: f64,
) -> Result<(Vec<Layer>, usize)> {
    let mut layers = Vec::new();
    let mut ch = cin;
    for _ in 0..count {
        layers.push(Layer::Conv(Conv1d::new(
            alloc,
            ch,
            width,
            1,
            ConvMode::Same,
            Init::HeUniform,
        )?));
        layers.push(Layer::Relu);
        if dropout > 0.0 {
            layers.push(Layer::Dropout(dropout));
        }
        ch = width;
    }
    Ok((layers, ch))
}

fn cnn_stack(
    alloc: &mut ParamAllocator,
    cfg: &ModelConfig,
    cin: usize,
    channels: usize,
    blocks: usize,
    cout: usize,
) -> Result<Stack> {
    let k = cfg.kernel;
    let mut layers = Vec::new();
    let mut ch = cin;
    for _ in 0..cfg.down_stages {
        layers.push(Layer::Conv(Conv1d::new(alloc, ch, channels, k, ConvMode::Down2, Init::HeUniform)?));
        layers.push(Layer::Relu);
        ch = channels;
    }
    if cfg.down_stages == 0 {
        layers.push(Layer::Conv(Conv1d::new(alloc, ch, channels, k, ConvMode::Same, Init::HeUniform)?));
        layers.push(Layer::Relu);
        ch = channels;
    }
    for _ in 0..blocks {
        layers.push(Layer::Residual(ResidualBlock {
            a: Conv1d::new(alloc, ch, ch, k, ConvMode::Same, Init::HeUniform)?,
            b: Conv1d::new(alloc, ch, ch, k, ConvMode::Same, Init::Zero)?,
        }));
    }
    for _ in 0..cfg.up_stages {
        layers.push(Layer::Conv(Conv1d::new(alloc, ch, channels, k, ConvMode::Up2, Init::Interpolating)?));
        layers.push(Layer::Relu);
    }
    layers.push(Layer::Conv(Conv1d::new(alloc, ch, cout, k, ConvMode::Same, Init::XavierUniform)?));
    layers.push(Layer::Sigmoid);
    Ok(Stack::new(layers))
}

/// Model input for one training or inference pass.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// `T x (state_inputs + frame_inputs)` frame feature rows.
    Frames(&'a Matrix),
    /// State vectors (`S x state_inputs`), the entry index of each frame and
    /// the `T x frame_inputs` frame-level columns.
    States {
        state_vectors: &'a Matrix,
        frame_to_state: &'a [usize],
        frame_level: &'a Matrix,
    },
}

impl Input<'_> {
    pub fn frames(&self) -> usize {
        match self {
            Input::Frames(m) => m.rows(),
            Input::States { frame_to_state, .. } => frame_to_state.len(),
        }
    }
}

/// Activations recorded for the backward pass.
#[derive(Debug, Clone)]
pub struct NetTape {
    ffnn: Tape,
    heads: Vec<Tape>,
    frame_to_state: Option<Vec<usize>>,
    states: usize,
}

/// Entry index of every frame.
pub fn frame_to_state(align: &StateAlignment) -> Vec<usize> {
    align.frame_to_entry()
}

fn repeat_frames(hidden: &SequenceTensor, frame_to_state: &[usize]) -> SequenceTensor {
    let mut out = SequenceTensor::zeros(hidden.channels(), frame_to_state.len());
    for c in 0..hidden.channels() {
        let src = hidden.channel(c);
        for (v, &s) in out.channel_mut(c).iter_mut().zip(frame_to_state) {
            *v = src[s];
        }
    }
    out
}

fn sum_frames(grad: &SequenceTensor, frame_to_state: &[usize], states: usize) -> SequenceTensor {
    let mut out = SequenceTensor::zeros(grad.channels(), states);
    for c in 0..grad.channels() {
        let g = grad.channel(c);
        let dst = out.channel_mut(c);
        for (&s, v) in frame_to_state.iter().zip(g) {
            dst[s] += v;
        }
    }
    out
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut alloc = ParamAllocator::default();
        let d = config.output_dim();
        let (ffnn, heads) = match config.architecture {
            Architecture::Baseline => {
                let (mut layers, ch) = ffnn_layers(
                    &mut alloc,
                    config.state_inputs + config.frame_inputs,
                    config.ffnn_width,
                    config.ffnn_layers,
                    config.dropout,
                )?;
                layers.push(Layer::Conv(Conv1d::new(
                    &mut alloc,
                    ch,
                    3 * d,
                    1,
                    ConvMode::Same,
                    Init::XavierUniform,
                )?));
                layers.push(Layer::Sigmoid);
                (Stack::new(layers), Vec::new())
            }
            Architecture::Proposed => {
                let (layers, ch) = ffnn_layers(
                    &mut alloc,
                    config.state_inputs,
                    config.ffnn_width,
                    config.ffnn_layers,
                    config.dropout,
                )?;
                let g_in = ch + config.frame_inputs;
                let mut heads = Vec::new();
                let (main_outputs, cnn1_outputs): (Vec<usize>, Vec<usize>) = match &config.split {
                    None => ((0..d).collect(), Vec::new()),
                    Some(split) => (0..d).partition(|&i| !split.outputs.contains(&config.output_names[i])),
                };
                if let Some(split) = &config.split {
                    heads.push(Head {
                        stack: cnn_stack(
                            &mut alloc,
                            &config,
                            g_in,
                            split.channels,
                            split.residual_blocks,
                            cnn1_outputs.len(),
                        )?,
                        outputs: cnn1_outputs,
                    });
                }
                heads.push(Head {
                    stack: cnn_stack(
                        &mut alloc,
                        &config,
                        g_in,
                        config.channels,
                        config.residual_blocks,
                        main_outputs.len(),
                    )?,
                    outputs: main_outputs,
                });
                (Stack::new(layers), heads)
            }
        };
        Ok(Self {
            config,
            ffnn,
            heads,
            param_count: alloc.len(),
            invocations: AtomicU64::new(0),
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Width of the network output: `D` (proposed) or `3D` (baseline).
    pub fn output_channels(&self) -> usize {
        match self.config.architecture {
            Architecture::Proposed => self.output_dim(),
            Architecture::Baseline => 3 * self.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.config.state_inputs + self.config.frame_inputs
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count];
        self.ffnn.initialize(&mut params, &mut rng);
        for h in &self.heads {
            h.stack.initialize(&mut params, &mut rng);
        }
        params
    }

    /// Number of vectors `F` has been applied to since the last reset.
    pub fn ffnn_invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn reset_invocations(&self) {
        self.invocations.store(0, Ordering::Relaxed);
    }

    /// All stacks in parameter order.
    pub fn stacks(&self) -> impl Iterator<Item = &Stack> {
        core::iter::once(&self.ffnn).chain(self.heads.iter().map(|h| &h.stack))
    }

    fn check_cols(&self, m: &Matrix, want: usize, what: &str) -> Result<()> {
        if m.cols() != want {
            return Err(Error::Shape(format!("{what} has {} columns, expected {want}", m.cols())));
        }
        Ok(())
    }

    fn check_alignment_input(&self, state_vectors: &Matrix, frame_to_state: &[usize], frame_level: &Matrix) -> Result<()> {
        self.check_cols(state_vectors, self.config.state_inputs, "state feature matrix")?;
        self.check_cols(frame_level, self.config.frame_inputs, "frame-level feature matrix")?;
        if frame_level.rows() != frame_to_state.len() {
            return Err(Error::Shape(format!(
                "{} frame-level rows for {} aligned frames",
                frame_level.rows(),
                frame_to_state.len()
            )));
        }
        if let Some(&s) = frame_to_state.iter().find(|&&s| s >= state_vectors.rows()) {
            return Err(Error::InvalidAlignment(format!(
                "frame refers to entry {s} but only {} state vectors were given",
                state_vectors.rows()
            )));
        }
        Ok(())
    }

    fn run_ffnn(
        &self,
        params: &[f64],
        x: &SequenceTensor,
        rng: Option<&mut dyn RngCore>,
        record: bool,
    ) -> Result<(SequenceTensor, Option<Tape>)> {
        self.invocations.fetch_add(x.frames() as u64, Ordering::Relaxed);
        if record {
            let (y, t) = self.ffnn.forward_train(params, x, rng)?;
            Ok((y, Some(t)))
        } else {
            Ok((self.ffnn.forward(params, x, rng)?, None))
        }
    }

    /// `F` applied to `T x state_inputs` rows, in inference mode.
    pub fn ffnn_forward(&self, params: &[f64], rows: &Matrix) -> Result<SequenceTensor> {
        self.check_cols(rows, self.config.state_inputs, "state feature matrix")?;
        self.run_ffnn(params, &SequenceTensor::from_matrix(rows), None, false).map(|r| r.0)
    }

    /// Input of `G` (`F` output stacked over the frame-level columns) for a
    /// whole sequence, in inference mode.
    pub fn cnn_input(&self, params: &[f64], input: Input<'_>) -> Result<SequenceTensor> {
        self.require(Architecture::Proposed)?;
        let (hidden, frame_level) = match input {
            Input::Frames(features) => {
                self.check_cols(features, self.input_dim(), "frame feature matrix")?;
                let x = SequenceTensor::from_matrix(features);
                let sc = self.config.state_inputs;
                let h = self.run_ffnn(params, &x.channel_range(0, sc), None, false)?.0;
                (h, x.channel_range(sc, x.channels()))
            }
            Input::States {
                state_vectors,
                frame_to_state,
                frame_level,
            } => {
                self.check_alignment_input(state_vectors, frame_to_state, frame_level)?;
                let h = self.run_ffnn(params, &SequenceTensor::from_matrix(state_vectors), None, false)?.0;
                (repeat_frames(&h, frame_to_state), SequenceTensor::from_matrix(frame_level))
            }
        };
        hidden.concat_channels(&frame_level)
    }

    fn scatter(&self, parts: Vec<SequenceTensor>, frames: usize) -> SequenceTensor {
        let mut out = SequenceTensor::zeros(self.output_dim(), frames);
        for (head, part) in self.heads.iter().zip(parts) {
            for (k, &o) in head.outputs.iter().enumerate() {
                out.channel_mut(o).copy_from_slice(part.channel(k));
            }
        }
        out
    }

    /// `G` over one segment of its input; the frame count must be a multiple
    /// of [`ModelConfig::length_multiple`].
    pub fn cnn_forward(&self, params: &[f64], g_input: &SequenceTensor) -> Result<Matrix> {
        self.require(Architecture::Proposed)?;
        self.check_segment(g_input.frames())?;
        let parts = self
            .heads
            .iter()
            .map(|h| h.stack.forward(params, g_input, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.scatter(parts, g_input.frames()).to_matrix())
    }

    /// CNN1 alone (split configurations only): the fast path for editing the
    /// outputs it owns.
    pub fn cnn1_forward(&self, params: &[f64], g_input: &SequenceTensor) -> Result<Option<Matrix>> {
        if self.heads.len() < 2 {
            return Ok(None);
        }
        self.check_segment(g_input.frames())?;
        Ok(Some(self.heads[0].stack.forward(params, g_input, None)?.to_matrix()))
    }

    fn check_segment(&self, frames: usize) -> Result<()> {
        let m = self.config.length_multiple();
        if frames == 0 || !frames.is_multiple_of(m) {
            return Err(Error::Shape(format!(
                "segment of {frames} frames is not a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    fn require(&self, arch: Architecture) -> Result<()> {
        if self.config.architecture != arch {
            return Err(Error::Config(format!(
                "operation needs a {arch:?} model, this is {:?}",
                self.config.architecture
            )));
        }
        Ok(())
    }

    /// Frame-driven forward over one segment: `T x D`.
    pub fn forward_frame_mode(&self, params: &[f64], features: &Matrix) -> Result<Matrix> {
        let g = self.cnn_input(params, Input::Frames(features))?;
        self.cnn_forward(params, &g)
    }

    /// State-driven forward over one segment: `F` runs once per alignment
    /// entry.
    pub fn forward_state_mode(
        &self,
        params: &[f64],
        state_vectors: &Matrix,
        align: &StateAlignment,
        frame_level: &Matrix,
    ) -> Result<Matrix> {
        align.validate()?;
        let map = frame_to_state(align);
        let g = self.cnn_input(
            params,
            Input::States {
                state_vectors,
                frame_to_state: &map,
                frame_level,
            },
        )?;
        self.cnn_forward(params, &g)
    }

    /// Baseline: normalized static + Δ + ΔΔ per frame, `T x 3D`.
    pub fn forward_baseline_ffnn(&self, params: &[f64], features: &Matrix) -> Result<Matrix> {
        self.require(Architecture::Baseline)?;
        self.check_cols(features, self.input_dim(), "frame feature matrix")?;
        let y = self.run_ffnn(params, &SequenceTensor::from_matrix(features), None, false)?.0;
        Ok(y.to_matrix())
    }

    /// Training forward pass; `rng` drives dropout.
    pub fn forward_train(
        &self,
        params: &[f64],
        input: Input<'_>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Matrix, NetTape)> {
        let frames = input.frames();
        if self.config.architecture == Architecture::Baseline {
            let Input::Frames(features) = input else {
                return Err(Error::Config("the baseline is frame-driven only".into()));
            };
            self.check_cols(features, self.input_dim(), "frame feature matrix")?;
            let (y, tape) = self.run_ffnn(params, &SequenceTensor::from_matrix(features), rng, true)?;
            return Ok((
                y.to_matrix(),
                NetTape {
                    ffnn: tape.expect("recorded"),
                    heads: Vec::new(),
                    frame_to_state: None,
                    states: frames,
                },
            ));
        }
        self.check_segment(frames)?;
        let (hidden, frame_level, map, states, tape) = match input {
            Input::Frames(features) => {
                self.check_cols(features, self.input_dim(), "frame feature matrix")?;
                let x = SequenceTensor::from_matrix(features);
                let sc = self.config.state_inputs;
                let (h, t) = self.run_ffnn(params, &x.channel_range(0, sc), rng, true)?;
                (h, x.channel_range(sc, x.channels()), None, frames, t)
            }
            Input::States {
                state_vectors,
                frame_to_state,
                frame_level,
            } => {
                self.check_alignment_input(state_vectors, frame_to_state, frame_level)?;
                let (h, t) = self.run_ffnn(
                    params,
                    &SequenceTensor::from_matrix(state_vectors),
                    rng,
                    true,
                )?;
                (
                    repeat_frames(&h, frame_to_state),
                    SequenceTensor::from_matrix(frame_level),
                    Some(frame_to_state.to_vec()),
                    state_vectors.rows(),
                    t,
                )
            }
        };
        let g = hidden.concat_channels(&frame_level)?;
        let mut parts = Vec::with_capacity(self.heads.len());
        let mut head_tapes = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (y, t) = h.stack.forward_train(params, &g, None)?;
            parts.push(y);
            head_tapes.push(t);
        }
        Ok((
            self.scatter(parts, frames).to_matrix(),
            NetTape {
                ffnn: tape.expect("recorded"),
                heads: head_tapes,
                frame_to_state: map,
                states,
            },
        ))
    }

    /// Accumulate parameter gradients for `d_out` (`T x output_channels`).
    pub fn backward(&self, params: &[f64], tape: &NetTape, d_out: &Matrix, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.param_count {
            return Err(Error::Shape(format!(
                "{} gradient slots for {} parameters",
                grad.len(),
                self.param_count
            )));
        }
        if d_out.cols() != self.output_channels() {
            return Err(Error::Shape(format!(
                "output gradient has {} columns, expected {}",
                d_out.cols(),
                self.output_channels()
            )));
        }
        let dy = SequenceTensor::from_matrix(d_out);
        if self.config.architecture == Architecture::Baseline {
            self.ffnn.backward(params, &tape.ffnn, &dy, grad)?;
            return Ok(());
        }
        let mut dg: Option<SequenceTensor> = None;
        for (head, htape) in self.heads.iter().zip(&tape.heads) {
            let mut part = SequenceTensor::zeros(head.outputs.len(), dy.frames());
            for (k, &o) in head.outputs.iter().enumerate() {
                part.channel_mut(k).copy_from_slice(dy.channel(o));
            }
            let d = head.stack.backward(params, htape, &part, grad)?;
            dg = Some(match dg {
                None => d,
                Some(mut acc) => {
                    acc.as_mut_slice().iter_mut().zip(d.as_slice()).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        let dg = dg.ok_or_else(|| Error::Config("network has no CNN part".into()))?;
        let dh = dg.channel_range(0, self.config.ffnn_width);
        let dh = match &tape.frame_to_state {
            None => dh,
            Some(map) => sum_frames(&dh, map, tape.states),
        };
        self.ffnn.backward(params, &tape.ffnn, &dh, grad)?;
        Ok(())
    }

    /// Analytic MACs for `frames` frames of which `states` alignment entries.
    pub fn macs(&self, frames: usize, states: usize, mode: DriveMode) -> MacReport {
        let f_rows = match mode {
            DriveMode::Frame => frames,
            DriveMode::State => states,
        };
        MacReport {
            ffnn: self.ffnn.macs(f_rows),
            cnn: self.heads.iter().map(|h| h.stack.macs(frames)).sum(),
        }
    }

    /// MACs of CNN1 alone (zero without a split).
    pub fn cnn1_macs(&self, frames: usize) -> u64 {
        if self.heads.len() < 2 {
            return 0;
        }
        self.heads[0].stack.macs(frames)
    }

    /// Input frames (relative, inclusive) that can influence output frame
    /// `p` of the CNN part.
    pub fn receptive_interval(&self, p: isize) -> (isize, isize) {
        self.heads
            .iter()
            .map(|h| receptive_interval(&h.stack.layers, p))
            .fold((p, p), |(a, b), (c, d)| (a.min(c), b.max(d)))
    }

    pub fn receptive_field(&self) -> usize {
        self.heads
            .iter()
            .map(|h| receptive_field(&h.stack.layers))
            .max()
            .unwrap_or(1)
    }
}

/// Input interval that output frame `p` of `layers` depends on.
pub fn receptive_interval(layers: &[Layer], p: isize) -> (isize, isize) {
    let (mut a, mut b) = (p, p);
    for l in layers.iter().rev() {
        match l {
            Layer::Conv(c) => {
                let h = (c.kernel / 2) as isize;
                (a, b) = match c.mode {
                    ConvMode::Same => (a - h, b + h),
                    ConvMode::Down2 => (2 * a - h, 2 * b + h),
                    ConvMode::Up2 => (-((h - a).div_euclid(2)), (b + h).div_euclid(2)),
                };
            }
            Layer::Residual(r) => {
                let h = (r.a.kernel / 2 + r.b.kernel / 2) as isize;
                (a, b) = (a - h, b + h);
            }
            _ => {}
        }
    }
    (a, b)
}

/// Largest receptive field (in input frames) over output phases.
pub fn receptive_field(layers: &[Layer]) -> usize {
    let strides = layers
        .iter()
        .filter(|l| matches!(l, Layer::Conv(c) if c.mode != ConvMode::Same))
        .count();
    let period = 1isize << strides.min(16);
    let base = 1 << 20;
    (0..period)
        .map(|k| {
            let (a, b) = receptive_interval(layers, base + k);
            (b - a + 1) as usize
        })
        .max()
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::AlignedState;
    use crate::testutil::*;
    use rand::Rng;

    fn names(d: usize) -> Vec<String> {
        let mut n: Vec<String> = CNN1_OUTPUTS.iter().map(|s| s.to_string()).collect();
        n.truncate(d);
        for i in n.len()..d {
            n.push(format!("x{i}"));
        }
        n
    }

    fn tiny(arch: Architecture, split: bool) -> ModelConfig {
        let mut c = ModelConfig {
            ffnn_width: 6,
            ffnn_layers: 2,
            channels: 5,
            residual_blocks: 1,
            architecture: arch,
            segment_frames: 16,
            overlap_frames: 4,
            ..ModelConfig::small()
        }
        .with_io(4, 2, names(6));
        if split {
            c.split = Some(SplitConfig {
                outputs: CNN1_OUTPUTS.iter().map(|s| s.to_string()).collect(),
                channels: 3,
                residual_blocks: 1,
            });
        }
        c
    }

    fn random_alignment(r: &mut impl Rng, frames_per_state: (usize, usize), phonemes: usize) -> StateAlignment {
        let mut entries = Vec::new();
        let mut t = 0;
        for p in 0..phonemes {
            for s in 1..=5 {
                let n = r.gen_range(frames_per_state.0..=frames_per_state.1);
                entries.push(AlignedState {
                    phoneme: p,
                    state: s,
                    start: t,
                    end: t + n,
                });
                t += n;
            }
        }
        StateAlignment {
            states_per_phoneme: 5,
            frame_shift: 0.005,
            entries,
        }
    }

    fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, uniform_vec(r, rows * cols, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn output_shapes() {
        let net = Network::new(tiny(Architecture::Proposed, false)).unwrap();
        let p = net.init_params(1);
        let mut r = rng(1);
        let y = net.forward_frame_mode(&p, &random_matrix(&mut r, 16, 6)).unwrap();
        assert_eq!((y.rows(), y.cols()), (16, 6));
        assert!(net.forward_frame_mode(&p, &random_matrix(&mut r, 14, 6)).is_err());
        assert!(net.forward_frame_mode(&p, &random_matrix(&mut r, 16, 5)).is_err());

        let base = Network::new(tiny(Architecture::Baseline, false)).unwrap();
        let y = base
            .forward_baseline_ffnn(&base.init_params(1), &random_matrix(&mut r, 7, 6))
            .unwrap();
        assert_eq!((y.rows(), y.cols()), (7, 18));
    }

    #[test]
    fn full_size_segment_shape() {
        let net = Network::new(ModelConfig::small().with_io(10, 6, names(30))).unwrap();
        let p = net.init_params(0);
        let y = net.forward_frame_mode(&p, &Matrix::zeros(2000, 16)).unwrap();
        assert_eq!((y.rows(), y.cols()), (2000, 30));
    }

    #[test]
    fn zero_weights_give_sigmoid_of_bias() {
        let net = Network::new(tiny(Architecture::Proposed, true)).unwrap();
        let mut p = vec![0.0; net.param_count()];
        for h in &net.heads {
            if let Some(Layer::Conv(c)) = h.stack.layers.iter().rev().nth(1) {
                c.bias_mut(&mut p).fill(0.7);
            }
        }
        let mut r = rng(2);
        let y = net.forward_frame_mode(&p, &random_matrix(&mut r, 8, 6)).unwrap();
        let want = crate::nn::sigmoid(0.7);
        assert!(y.as_slice().iter().all(|v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn ffnn_is_frame_wise() {
        let net = Network::new(tiny(Architecture::Proposed, false)).unwrap();
        let p = net.init_params(3);
        let mut r = rng(3);
        let a = random_matrix(&mut r, 5, 4);
        let mut b = random_matrix(&mut r, 9, 4);
        b.row_mut(7).copy_from_slice(a.row(2));
        let (fa, fb) = (net.ffnn_forward(&p, &a).unwrap(), net.ffnn_forward(&p, &b).unwrap());
        for c in 0..fa.channels() {
            assert_eq!(fa.channel(c)[2], fb.channel(c)[7]);
        }
    }

    #[test]
    fn state_mode_equals_frame_mode_and_counts_invocations() {
        let mut r = rng(4);
        for split in [false, true] {
            let net = Network::new(tiny(Architecture::Proposed, split)).unwrap();
            let p = net.init_params(4);
            for _ in 0..20 {
                let phonemes = r.gen_range(1..4);
                let mut align = random_alignment(&mut r, (1, 6), phonemes);
                // trim to a multiple of 4 by extending the last entry
                let total = align.total_frames();
                align.entries.last_mut().unwrap().end += (4 - total % 4) % 4;
                let states = random_matrix(&mut r, align.entries.len(), 4);
                let frame_level = random_matrix(&mut r, align.total_frames(), 2);
                let map = frame_to_state(&align);
                let mut frames = Matrix::zeros(map.len(), 6);
                for (t, &s) in map.iter().enumerate() {
                    frames.row_mut(t)[..4].copy_from_slice(states.row(s));
                    frames.row_mut(t)[4..].copy_from_slice(frame_level.row(t));
                }
                net.reset_invocations();
                let ys = net.forward_state_mode(&p, &states, &align, &frame_level).unwrap();
                assert_eq!(net.ffnn_invocations(), align.entries.len() as u64);
                net.reset_invocations();
                let yf = net.forward_frame_mode(&p, &frames).unwrap();
                assert_eq!(net.ffnn_invocations(), map.len() as u64);
                assert!(ys.max_abs_diff(&yf) <= 1e-10);
            }
        }
    }

    #[test]
    fn state_mode_ffnn_macs_scale_with_states() {
        let net = Network::new(tiny(Architecture::Proposed, true)).unwrap();
        let f = net.macs(500, 10, DriveMode::Frame);
        let s = net.macs(500, 10, DriveMode::State);
        assert_eq!(f.ffnn * 10, s.ffnn * 500);
        assert_eq!(f.cnn, s.cnn);
        assert!(s.total() < f.total());
    }

    fn check_gradients(net: &Network, input: Input<'_>, seed: u64) {
        let mut r = rng(seed);
        // jitter so no pre-activation sits exactly on the ReLU kink
        let params: Vec<f64> = net
            .init_params(seed)
            .iter()
            .map(|p| p + r.gen_range(-0.1..0.1))
            .collect();
        let (y, tape) = net.forward_train(&params, input, None).unwrap();
        let probe = random_matrix(&mut r, y.rows(), y.cols());
        let objective = |p: &[f64]| -> f64 {
            let (y, _) = net.forward_train(p, input, None).unwrap();
            y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&params, &tape, &probe, &mut grad).unwrap();
        let num = numeric_gradient(&params, 1e-5, objective);
        let err = max_rel_err(&grad, &num, 1e-3);
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn network_gradients() {
        let mut r = rng(5);
        for seed in 0..4 {
            let net = Network::new(tiny(Architecture::Proposed, seed % 2 == 1)).unwrap();
            let features = random_matrix(&mut r, 8, 6);
            check_gradients(&net, Input::Frames(&features), seed);

            let align = random_alignment(&mut r, (1, 1), 1);
            let mut align = align;
            align.entries[4].end += 3;
            let states = random_matrix(&mut r, 5, 4);
            let fl = random_matrix(&mut r, 8, 2);
            let map = frame_to_state(&align);
            check_gradients(
                &net,
                Input::States {
                    state_vectors: &states,
                    frame_to_state: &map,
                    frame_level: &fl,
                },
                seed,
            );

            let base = Network::new(tiny(Architecture::Baseline, false)).unwrap();
            check_gradients(&base, Input::Frames(&features), seed);
        }
    }

    #[test]
    fn receptive_field_examples() {
        let mut a = ParamAllocator::default();
        let k3 = |a: &mut ParamAllocator, mode| Layer::Conv(Conv1d::new(a, 1, 1, 3, mode, Init::HeUniform).unwrap());
        assert_eq!(receptive_field(&[k3(&mut a, ConvMode::Same)]), 3);
        assert_eq!(
            receptive_field(&[k3(&mut a, ConvMode::Same), k3(&mut a, ConvMode::Same)]),
            5
        );
    }

    /// Which input frames change output frame `p` when perturbed.
    fn probe_field(stack: &Stack, params: &[f64], cin: usize, frames: usize, p: usize) -> (isize, isize) {
        let mut r = rng(6);
        let base = SequenceTensor::from_vec(cin, frames, uniform_vec(&mut r, cin * frames, 0.0, 1.0)).unwrap();
        let y0 = stack.forward(params, &base, None).unwrap();
        let mut hit = Vec::new();
        for j in 0..frames {
            let mut x = base.clone();
            for c in 0..cin {
                x.channel_mut(c)[j] += 0.5;
            }
            let y = stack.forward(params, &x, None).unwrap();
            if (0..y.channels()).any(|c| y.channel(c)[p] != y0.channel(c)[p]) {
                hit.push(j as isize);
            }
        }
        (*hit.first().unwrap(), *hit.last().unwrap())
    }

    #[test]
    fn receptive_field_matches_perturbation_probe() {
        let mut a = ParamAllocator::default();
        let layers = vec![
            Layer::Conv(Conv1d::new(&mut a, 1, 2, 3, ConvMode::Down2, Init::HeUniform).unwrap()),
            Layer::Conv(Conv1d::new(&mut a, 2, 2, 3, ConvMode::Same, Init::HeUniform).unwrap()),
            Layer::Conv(Conv1d::new(&mut a, 2, 1, 3, ConvMode::Up2, Init::HeUniform).unwrap()),
        ];
        let stack = Stack::new(layers.clone());
        let mut r = rng(7);
        let params = uniform_vec(&mut r, a.len(), 0.1, 1.0);
        let mut widest = 0;
        for p in 16..20 {
            let got = probe_field(&stack, &params, 1, 40, p);
            assert_eq!(got, receptive_interval(&layers, p as isize), "output {p}");
            widest = widest.max((got.1 - got.0 + 1) as usize);
        }
        assert_eq!(receptive_field(&layers), widest);

        let net = Network::new(tiny(Architecture::Proposed, false)).unwrap();
        let params: Vec<f64> = uniform_vec(&mut r, net.param_count(), 0.01, 0.05);
        let g = &net.heads[0].stack;
        for p in 28..32 {
            let (lo, hi) = probe_field(g, &params, 8, 64, p);
            let (a, b) = net.receptive_interval(p as isize);
            assert!(a <= lo && hi <= b, "probe {lo}..{hi} outside {a}..{b}");
        }
    }

    #[test]
    fn config_validation() {
        let ok = tiny(Architecture::Proposed, true);
        assert!(ok.validate().is_ok());
        for bad in [
            ModelConfig { up_stages: 1, ..ok.clone() },
            ModelConfig { kernel: 4, ..ok.clone() },
            ModelConfig { segment_frames: 18, ..ok.clone() },
            ModelConfig { overlap_frames: 9, ..ok.clone() },
            ModelConfig { dropout: 1.0, ..ok.clone() },
            ModelConfig { output_names: Vec::new(), ..ok.clone() },
        ] {
            assert!(matches!(Network::new(bad), Err(Error::Config(_) | Error::DropoutProbability(_))));
        }
        let mut split = ok.clone();
        split.split.as_mut().unwrap().outputs.push("nope".into());
        assert!(Network::new(split).is_err());
    }
}
