//! Segment planning, cross-faded assembly and end-to-end feature synthesis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::WindowSet;
use crate::matrix::Matrix;
use crate::mlpg::{generate, GaussianSequence};
use crate::model::{frame_to_state, Architecture, Input, Network};
use crate::nn::SequenceTensor;
use crate::score::{NormalizationStats, ScoreFeatures, StateAlignment};
use crate::trajloss::TiedCovariance;
use crate::vocoder::is_flag_channel;
use crate::{Error, Result};

/// One segment: frames `start..end` of the sequence, run as `padded`
/// frames (the tail beyond `end` repeats the last frame and is discarded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub padded: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub frames: usize,
    pub segment_frames: usize,
    pub overlap: usize,
    pub segments: Vec<Segment>,
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Plan with segment lengths divisible by 4 (two stride-2 stages).
pub fn plan_segments(frames: usize, segment_frames: usize, overlap: usize) -> Result<SegmentPlan> {
    plan_segments_aligned(frames, segment_frames, overlap, 4)
}

/// Consecutive segments of `segment_frames` sharing `overlap` frames; every
/// segment is padded to a multiple of `multiple`. At most two segments
/// cover any frame, so `overlap` may not exceed half a segment.
///
/// Outputs of two segments agree at a frame only if the segments start at
/// the same phase modulo `multiple`, which holds when
/// `segment_frames - overlap` is itself a multiple of `multiple`.
pub fn plan_segments_aligned(
    frames: usize,
    segment_frames: usize,
    overlap: usize,
    multiple: usize,
) -> Result<SegmentPlan> {
    if frames == 0 {
        return Err(Error::EmptySequence);
    }
    if multiple == 0 || segment_frames == 0 || !segment_frames.is_multiple_of(multiple) {
        return Err(Error::Plan(format!(
            "segment length {segment_frames} must be a positive multiple of {multiple}"
        )));
    }
    if 2 * overlap > segment_frames {
        return Err(Error::Plan(format!(
            "overlap {overlap} exceeds half the segment length {segment_frames}"
        )));
    }
    let mut segments = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + segment_frames).min(frames);
        segments.push(Segment {
            start,
            end,
            padded: round_up(end - start, multiple),
        });
        if end == frames {
            break;
        }
        start = end - overlap;
    }
    Ok(SegmentPlan {
        frames,
        segment_frames,
        overlap,
        segments,
    })
}

impl SegmentPlan {
    /// `(segment index, weight)` for every segment contributing to frame `f`.
    /// In an overlap the later segment ramps in with `(i + 0.5) / overlap`.
    pub fn frame_weights(&self, f: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(2);
        for (k, s) in self.segments.iter().enumerate() {
            if f < s.start || f >= s.end {
                continue;
            }
            let fade_in = k > 0 && f < self.segments[k - 1].end;
            let fade_out = self.segments.get(k + 1).is_some_and(|n| f >= n.start);
            let w = if fade_in {
                let len = self.segments[k - 1].end - s.start;
                (f - s.start) as f64 / len as f64 + 0.5 / len as f64
            } else if fade_out {
                let next = self.segments[k + 1];
                let len = s.end - next.start;
                1.0 - ((f - next.start) as f64 + 0.5) / len as f64
            } else {
                1.0
            };
            out.push((k, w));
        }
        out
    }
}

/// Blend segment outputs (`padded x D` each) into one `T x D` sequence.
pub fn crossfade_assemble(outputs: &[Matrix], plan: &SegmentPlan) -> Result<Matrix> {
    if outputs.len() != plan.segments.len() {
        return Err(Error::Shape(format!(
            "{} segment outputs for {} planned segments",
            outputs.len(),
            plan.segments.len()
        )));
    }
    let d = outputs.first().map_or(0, Matrix::cols);
    for (o, s) in outputs.iter().zip(&plan.segments) {
        if o.rows() != s.padded || o.cols() != d {
            return Err(Error::Shape(format!(
                "segment output {}x{} for a {}-frame segment",
                o.rows(),
                o.cols(),
                s.padded
            )));
        }
    }
    let mut out = Matrix::zeros(plan.frames, d);
    for f in 0..plan.frames {
        let weights = plan.frame_weights(f);
        if let [(k, _)] = weights[..] {
            out.row_mut(f).copy_from_slice(outputs[k].row(f - plan.segments[k].start));
            continue;
        }
        let row = out.row_mut(f);
        for (k, w) in weights {
            let src = outputs[k].row(f - plan.segments[k].start);
            for (v, s) in row.iter_mut().zip(src) {
                *v += w * s;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SynthesisMode {
    ProposedFrame,
    ProposedState,
    BaselineMlpg,
}

/// Network, parameters and everything needed to map score features to
/// acoustic features.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub params: Vec<f64>,
    /// Over all input columns (state-level then frame-level).
    pub input_stats: NormalizationStats,
    /// Over the `D` statics (proposed) or the `3D` windowed targets (baseline).
    pub output_stats: NormalizationStats,
    /// Tied covariance in normalized output units.
    pub covariance: TiedCovariance,
    pub windows: WindowSet,
}

/// Normalized network inputs for one song.
#[derive(Debug, Clone)]
pub struct NormalizedInputs {
    pub frames: Matrix,
    pub state_vectors: Matrix,
    pub frame_level: Matrix,
    pub frame_to_state: Vec<usize>,
}

impl TrainedModel {
    pub fn new(
        network: Network,
        params: Vec<f64>,
        input_stats: NormalizationStats,
        output_stats: NormalizationStats,
        covariance: TiedCovariance,
    ) -> Result<Self> {
        if params.len() != network.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a network with {}",
                params.len(),
                network.param_count()
            )));
        }
        if input_stats.dim() != network.input_dim() {
            return Err(Error::Shape(format!(
                "input statistics cover {} columns, network takes {}",
                input_stats.dim(),
                network.input_dim()
            )));
        }
        if output_stats.dim() != network.output_channels() {
            return Err(Error::Shape(format!(
                "output statistics cover {} columns, network emits {}",
                output_stats.dim(),
                network.output_channels()
            )));
        }
        let windows = WindowSet::standard();
        if covariance.dim() != windows.len() * network.output_dim() {
            return Err(Error::Shape(format!(
                "covariance has {} entries, expected {}",
                covariance.dim(),
                windows.len() * network.output_dim()
            )));
        }
        covariance.validate()?;
        Ok(Self {
            network,
            params,
            input_stats,
            output_stats,
            covariance,
            windows,
        })
    }

    pub fn normalize_inputs(&self, features: &ScoreFeatures, align: &StateAlignment) -> Result<NormalizedInputs> {
        let sc = self.network.config.state_inputs;
        let total = self.input_stats.dim();
        let state_cols: Vec<usize> = (0..sc).collect();
        let frame_cols: Vec<usize> = (sc..total).collect();
        Ok(NormalizedInputs {
            frames: self.input_stats.normalize(&features.frames.values)?,
            state_vectors: self.input_stats.select(&state_cols).normalize(&features.state_vectors)?,
            frame_level: self.input_stats.select(&frame_cols).normalize(&features.frame_level)?,
            frame_to_state: frame_to_state(align),
        })
    }

    /// `G` input for the whole song (`F` evaluated once per frame or once
    /// per state).
    pub fn cnn_input(&self, inputs: &NormalizedInputs, mode: SynthesisMode) -> Result<SequenceTensor> {
        match mode {
            SynthesisMode::ProposedFrame => self.network.cnn_input(&self.params, Input::Frames(&inputs.frames)),
            SynthesisMode::ProposedState => self.network.cnn_input(
                &self.params,
                Input::States {
                    state_vectors: &inputs.state_vectors,
                    frame_to_state: &inputs.frame_to_state,
                    frame_level: &inputs.frame_level,
                },
            ),
            SynthesisMode::BaselineMlpg => Err(Error::Config("the baseline has no CNN part".into())),
        }
    }

    pub fn plan(&self, frames: usize) -> Result<SegmentPlan> {
        let c = &self.network.config;
        plan_segments_aligned(frames, c.segment_frames, c.overlap_frames, c.length_multiple())
    }

    /// Edge-padded `G` inputs, one per planned segment.
    pub fn segment_inputs(g_input: &SequenceTensor, plan: &SegmentPlan) -> Vec<SequenceTensor> {
        plan.segments
            .iter()
            .map(|s| g_input.frame_range_padded(s.start, s.start + s.padded))
            .collect()
    }

    /// `G` over one padded segment; normalized `padded x D`.
    pub fn run_segment(&self, segment: &SequenceTensor) -> Result<Matrix> {
        self.network.cnn_forward(&self.params, segment)
    }

    /// Normalized proposed-model output, segment by segment.
    pub fn proposed_normalized(&self, inputs: &NormalizedInputs, mode: SynthesisMode) -> Result<Matrix> {
        let g = self.cnn_input(inputs, mode)?;
        let plan = self.plan(g.frames())?;
        let outputs = Self::segment_inputs(&g, &plan)
            .iter()
            .map(|s| self.run_segment(s))
            .collect::<Result<Vec<_>>>()?;
        crossfade_assemble(&outputs, &plan)
    }

    /// Denormalize statics and snap flag channels to {0, 1}.
    pub fn finish_statics(&self, normalized: &Matrix) -> Result<Matrix> {
        let d = self.network.output_dim();
        let stats = self.output_stats.select(&(0..d).collect::<Vec<_>>());
        let mut out = stats.denormalize(normalized)?;
        self.threshold_flags(&mut out);
        Ok(out)
    }

    fn threshold_flags(&self, m: &mut Matrix) {
        for (c, name) in self.network.config.output_names.iter().enumerate() {
            if is_flag_channel(name) {
                for t in 0..m.rows() {
                    let v = if m.get(t, c) >= 0.5 { 1.0 } else { 0.0 };
                    m.set(t, c, v);
                }
            }
        }
    }

    /// Baseline means and variances in natural units (`T x 3D` each).
    pub fn baseline_gaussians(&self, inputs: &NormalizedInputs) -> Result<GaussianSequence> {
        let y = self.network.forward_baseline_ffnn(&self.params, &inputs.frames)?;
        let means = self.output_stats.denormalize(&y)?;
        let variances: Vec<f64> = self
            .covariance
            .variances
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = self.output_stats.scale(j);
                v * s * s
            })
            .map(|v| v.max(self.covariance.floor))
            .collect();
        GaussianSequence::tied(means, &variances)
    }

    /// Static columns of the baseline output before MLPG, natural units.
    pub fn baseline_raw_statics(&self, inputs: &NormalizedInputs) -> Result<Matrix> {
        let g = self.baseline_gaussians(inputs)?;
        let d = self.network.output_dim();
        Ok(g.means.select_cols(&(0..d).collect::<Vec<_>>()))
    }

    /// Acoustic statics `T x D` in natural units.
    pub fn synthesize_features(
        &self,
        features: &ScoreFeatures,
        align: &StateAlignment,
        mode: SynthesisMode,
    ) -> Result<Matrix> {
        let arch = self.network.config.architecture;
        let expected = if mode == SynthesisMode::BaselineMlpg {
            Architecture::Baseline
        } else {
            Architecture::Proposed
        };
        if arch != expected {
            return Err(Error::Config(format!("{mode:?} synthesis needs a {expected:?} model, got {arch:?}")));
        }
        let inputs = self.normalize_inputs(features, align)?;
        match mode {
            SynthesisMode::BaselineMlpg => {
                let mut out = generate(&self.baseline_gaussians(&inputs)?, &self.windows)?;
                self.threshold_flags(&mut out);
                Ok(out)
            }
            _ => self.finish_statics(&self.proposed_normalized(&inputs, mode)?),
        }
    }
}

/// Mean over frames and the selected columns of `(x[t+1] - x[t])²`.
pub fn mean_squared_delta(m: &Matrix, cols: &[usize]) -> f64 {
    if m.rows() < 2 || cols.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for t in 1..m.rows() {
        for &c in cols {
            let d = m.get(t, c) - m.get(t - 1, c);
            total += d * d;
        }
    }
    total / ((m.rows() - 1) * cols.len()) as f64
}

/// Root mean squared difference over the selected columns.
pub fn rmse(a: &Matrix, b: &Matrix, cols: &[usize]) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 || cols.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..a.rows() {
        for &c in cols {
            let d = a.get(t, c) - b.get(t, c);
            total += d * d;
        }
    }
    Ok(libm::sqrt(total / (a.rows() * cols.len()) as f64))
}

/// Per-frame sum of contributing weights; every entry is 1 for a valid plan.
pub fn weight_sums(plan: &SegmentPlan) -> Vec<f64> {
    let mut sums = vec![0.0; plan.frames];
    for (f, s) in sums.iter_mut().enumerate() {
        *s = plan.frame_weights(f).iter().map(|(_, w)| w).sum();
    }
    sums
}
