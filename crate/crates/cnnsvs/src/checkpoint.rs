//! Trained-model checkpoints.
//!
//! ```text
//! magic      b"SVSC"
//! version    u32 (= 1)
//! header     u32 byte length, then TOML (see [`Header`])
//! params     f32 x header.sections.params
//! in_min     f64 x input_stats,   in_max  f64 x input_stats
//! out_min    f64 x output_stats,  out_max f64 x output_stats
//! variances  f64 x covariance
//! ```
//!
//! Weights are stored in single precision; statistics and the covariance
//! keep full precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cnnsvs_core::corpus::CorpusConfig;
use cnnsvs_core::generate::TrainedModel;
use cnnsvs_core::model::{ModelConfig, Network};
use cnnsvs_core::score::NormalizationStats;
use cnnsvs_core::train::TrainConfig;
use cnnsvs_core::trajloss::TiedCovariance;

use crate::atomic::write_atomic;
use crate::features::Reader;
use crate::FormatError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SVSC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub stack: usize,
    pub kind: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sections {
    pub params: usize,
    pub input_stats: usize,
    pub output_stats: usize,
    pub covariance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub train: Option<TrainConfig>,
    pub input_range: (f64, f64),
    pub output_range: (f64, f64),
    pub variance_floor: f64,
    pub sections: Sections,
    pub layers: Vec<LayerRecord>,
}

/// A model plus the corpus settings needed to featurize new scores.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub corpus: CorpusConfig,
    pub train: Option<TrainConfig>,
}

pub fn layer_records(network: &Network) -> Vec<LayerRecord> {
    let mut out = Vec::new();
    for (i, stack) in network.stacks().enumerate() {
        let mut w = stack.convs().next().map_or(0, |c| c.cin);
        for layer in &stack.layers {
            let s = layer.spec(w);
            out.push(LayerRecord {
                stack: i,
                kind: format!("{:?}", s.kind),
                cin: s.cin,
                cout: s.cout,
                kernel: s.kernel,
                stride: s.stride,
                dropout: s.dropout,
            });
            w = s.cout;
        }
    }
    out
}

impl Checkpoint {
    fn header(&self) -> Header {
        let m = &self.model;
        Header {
            model: m.network.config.clone(),
            corpus: self.corpus.clone(),
            train: self.train,
            input_range: (m.input_stats.lo, m.input_stats.hi),
            output_range: (m.output_stats.lo, m.output_stats.hi),
            variance_floor: m.covariance.floor,
            sections: Sections {
                params: m.params.len(),
                input_stats: m.input_stats.dim(),
                output_stats: m.output_stats.dim(),
                covariance: m.covariance.dim(),
            },
            layers: layer_records(&m.network),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let header = toml::to_string(&self.header()).map_err(|e| FormatError::Invalid(format!("header: {e}")))?;
        let m = &self.model;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for &p in &m.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        for v in [
            &m.input_stats.min,
            &m.input_stats.max,
            &m.output_stats.min,
            &m.output_stats.max,
            &m.covariance.variances,
        ] {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic { expected: "SVSC" });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| FormatError::Invalid("header is not UTF-8".into()))?;
        let header: Header = toml::from_str(text).map_err(|e| FormatError::Invalid(format!("header: {e}")))?;
        let network = Network::new(header.model.clone())?;
        let rebuilt = layer_records(&network);
        if rebuilt != header.layers {
            return Err(FormatError::Invalid(
                "layer records do not match the network built from the stored configuration".into(),
            ));
        }
        let s = header.sections;
        if s.params != network.param_count() {
            return Err(FormatError::Invalid(format!(
                "{} stored parameters, configuration needs {}",
                s.params,
                network.param_count()
            )));
        }
        let params = r
            .take(s.params * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut f64s = |n: usize| -> Result<Vec<f64>, FormatError> {
            Ok(r.take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let input_stats = NormalizationStats {
            min: f64s(s.input_stats)?,
            max: f64s(s.input_stats)?,
            lo: header.input_range.0,
            hi: header.input_range.1,
        };
        let output_stats = NormalizationStats {
            min: f64s(s.output_stats)?,
            max: f64s(s.output_stats)?,
            lo: header.output_range.0,
            hi: header.output_range.1,
        };
        let covariance = TiedCovariance::new(f64s(s.covariance)?, header.variance_floor)?;
        let trailing = r.rest().len();
        if trailing != 0 {
            return Err(FormatError::Invalid(format!("{trailing} trailing bytes")));
        }
        let model = TrainedModel::new(network, params, input_stats, output_stats, covariance)?;
        Ok(Self {
            model,
            corpus: header.corpus,
            train: header.train,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), FormatError> {
    write_atomic(path, &ckpt.to_bytes()?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
