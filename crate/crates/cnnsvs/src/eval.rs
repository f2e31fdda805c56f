//! Held-out accuracy and smoothness of a trained model.

use rayon::prelude::*;

use cnnsvs_core::generate::{mean_squared_delta, SynthesisMode, TrainedModel};
use cnnsvs_core::matrix::Matrix;
use cnnsvs_core::score::{fit_normalization, score_features, ContextConfig, NormalizationStats, StateAlignment, OUTPUT_RANGE};
use cnnsvs_core::score::Score;
use cnnsvs_core::vocoder::AcousticLayout;
use cnnsvs_core::Result;

use crate::synth::synthesize;

/// Every static channel except the binary flags.
pub fn continuous_channels(layout: &AcousticLayout) -> Vec<usize> {
    (0..layout.dim())
        .filter(|&c| c != layout.vuv() && c != layout.vib_flag())
        .collect()
}

/// Output statistics fitted on the training split's statics.
pub fn reference_stats<'a>(train: impl IntoIterator<Item = &'a Matrix>) -> Result<NormalizationStats> {
    fit_normalization(train, OUTPUT_RANGE)
}

pub struct HeldoutSong<'a> {
    pub score: &'a Score,
    pub alignment: &'a StateAlignment,
    pub acoustic: &'a Matrix,
}

/// Frame-weighted aggregates over the held-out songs, in normalized units
/// over the continuous channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldoutReport {
    pub songs: usize,
    pub frames: usize,
    pub rmse: f64,
    /// Mean squared frame-to-frame delta of the synthesized statics.
    pub msd: f64,
    pub msd_oracle: f64,
    /// Baseline only: the FFNN means before parameter generation.
    pub rmse_raw: Option<f64>,
    pub msd_raw: Option<f64>,
}

impl HeldoutReport {
    pub fn smoothness_ratio(&self) -> f64 {
        self.msd / self.msd_oracle
    }
}

struct SongStats {
    frames: f64,
    se: f64,
    msd: f64,
    msd_oracle: f64,
    raw: Option<(f64, f64)>,
}

pub fn evaluate_heldout(
    model: &TrainedModel,
    context: &ContextConfig,
    layout: &AcousticLayout,
    stats: &NormalizationStats,
    songs: &[HeldoutSong<'_>],
    mode: SynthesisMode,
) -> Result<HeldoutReport> {
    let cols = continuous_channels(layout);
    let sq = |a: &Matrix, b: &Matrix| -> f64 {
        (0..a.rows())
            .map(|t| cols.iter().map(|&c| (a.get(t, c) - b.get(t, c)).powi(2)).sum::<f64>())
            .sum::<f64>()
            / cols.len() as f64
    };
    let per_song = songs
        .par_iter()
        .map(|s| -> Result<SongStats> {
            let feats = score_features(s.score, s.alignment, context)?;
            let y = stats.normalize(&synthesize(model, &feats, s.alignment, mode)?)?;
            let o = stats.normalize(s.acoustic)?;
            let frames = o.rows() as f64;
            let raw = if mode == SynthesisMode::BaselineMlpg {
                let inputs = model.normalize_inputs(&feats, s.alignment)?;
                let r = stats.normalize(&model.baseline_raw_statics(&inputs)?)?;
                Some((sq(&r, &o), mean_squared_delta(&r, &cols) * frames))
            } else {
                None
            };
            Ok(SongStats {
                frames,
                se: sq(&y, &o),
                msd: mean_squared_delta(&y, &cols) * frames,
                msd_oracle: mean_squared_delta(&o, &cols) * frames,
                raw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n: f64 = per_song.iter().map(|s| s.frames).sum();
    let sum = |f: &dyn Fn(&SongStats) -> f64| per_song.iter().map(f).sum::<f64>();
    let raw = per_song.iter().all(|s| s.raw.is_some()) && !per_song.is_empty();
    Ok(HeldoutReport {
        songs: songs.len(),
        frames: n as usize,
        rmse: (sum(&|s| s.se) / n).sqrt(),
        msd: sum(&|s| s.msd) / n,
        msd_oracle: sum(&|s| s.msd_oracle) / n,
        rmse_raw: raw.then(|| (sum(&|s| s.raw.unwrap().0) / n).sqrt()),
        msd_raw: raw.then(|| sum(&|s| s.raw.unwrap().1) / n),
    })
}
