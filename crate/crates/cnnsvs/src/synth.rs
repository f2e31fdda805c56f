//! Feature synthesis with segment-parallel inference.

use rayon::prelude::*;

use cnnsvs_core::generate::{crossfade_assemble, SynthesisMode, TrainedModel};
use cnnsvs_core::matrix::Matrix;
use cnnsvs_core::model::{Architecture, DriveMode};
use cnnsvs_core::score::{ScoreFeatures, StateAlignment};
use cnnsvs_core::Result;

/// Same output as [`TrainedModel::synthesize_features`]; the `G` part of
/// the proposed model runs one rayon task per segment.
pub fn synthesize(
    model: &TrainedModel,
    features: &ScoreFeatures,
    align: &StateAlignment,
    mode: SynthesisMode,
) -> Result<Matrix> {
    if mode == SynthesisMode::BaselineMlpg || model.network.config.architecture == Architecture::Baseline {
        return model.synthesize_features(features, align, mode);
    }
    let inputs = model.normalize_inputs(features, align)?;
    let g = model.cnn_input(&inputs, mode)?;
    let plan = model.plan(g.frames())?;
    let outputs = TrainedModel::segment_inputs(&g, &plan)
        .par_iter()
        .map(|s| model.run_segment(s))
        .collect::<Result<Vec<_>>>()?;
    model.finish_statics(&crossfade_assemble(&outputs, &plan)?)
}

/// The mode a checkpoint was trained for.
pub fn default_mode(model: &TrainedModel) -> SynthesisMode {
    let c = &model.network.config;
    match (c.architecture, c.mode) {
        (Architecture::Baseline, _) => SynthesisMode::BaselineMlpg,
        (Architecture::Proposed, DriveMode::Frame) => SynthesisMode::ProposedFrame,
        (Architecture::Proposed, DriveMode::State) => SynthesisMode::ProposedState,
    }
}
