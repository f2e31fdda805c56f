//! On-disk corpus: scores, alignments, feature files and a manifest.
//!
//! ```text
//! <dir>/manifest.toml
//! <dir>/scores/song000.score
//! <dir>/alignments/song000.lab
//! <dir>/features/song000.svsf
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cnnsvs_core::corpus::{generate_song, phoneme_templates, CorpusConfig};
use cnnsvs_core::matrix::Matrix;
use cnnsvs_core::score::{parse_score, Score, StateAlignment};

use crate::align::{alignment_to_text, check_symbols, parse_alignment};
use crate::atomic::write_atomic;
use crate::features::{read_features, FeatureFile};

pub const MANIFEST: &str = "manifest.toml";

/// Sample rate recorded in corpus feature files, which are not tied to one.
pub const UNSPECIFIED_RATE: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongEntry {
    pub index: usize,
    pub split: Split,
    pub score: PathBuf,
    pub alignment: PathBuf,
    pub features: PathBuf,
    pub frames: usize,
    pub states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub songs: Vec<SongEntry>,
}

impl Manifest {
    pub fn total_frames(&self) -> usize {
        self.songs.iter().map(|s| s.frames).sum()
    }

    pub fn total_states(&self) -> usize {
        self.songs.iter().map(|s| s.states).sum()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Generate the corpus described by `config` into `dir`.
///
/// Songs are generated in parallel on the current rayon pool; the written
/// bytes do not depend on the thread count.
pub fn write_corpus(dir: &Path, config: &CorpusConfig) -> Result<Manifest> {
    config.validate()?;
    let templates = phoneme_templates(config);
    let names = config.layout.names();
    let songs = (0..config.songs)
        .into_par_iter()
        .map(|i| -> Result<SongEntry> {
            let song = generate_song(config, &templates, i)?;
            let stem = format!("song{i:03}");
            let entry = SongEntry {
                index: i,
                split: if config.test_indices().contains(&i) { Split::Test } else { Split::Train },
                score: Path::new("scores").join(format!("{stem}.score")),
                alignment: Path::new("alignments").join(format!("{stem}.lab")),
                features: Path::new("features").join(format!("{stem}.svsf")),
                frames: song.acoustic.rows(),
                states: song.alignment.entries.len(),
            };
            write_atomic(&dir.join(&entry.score), song.score.to_text().as_bytes())?;
            write_atomic(
                &dir.join(&entry.alignment),
                alignment_to_text(&song.alignment, &song.score).as_bytes(),
            )?;
            let ff = FeatureFile::from_matrix(names.clone(), &song.acoustic, config.frame_shift, UNSPECIFIED_RATE)?;
            write_atomic(&dir.join(&entry.features), &ff.to_bytes())?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config: config.clone(),
        songs,
    };
    let text = toml::to_string(&manifest).context("serializing manifest")?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedSong {
    pub entry: SongEntry,
    pub score: Score,
    pub alignment: StateAlignment,
    pub acoustic: Matrix,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub manifest: Manifest,
    pub songs: Vec<LoadedSong>,
}

impl LoadedCorpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedSong> {
        self.songs.iter().filter(move |s| s.entry.split == split)
    }
}

pub fn load_song(dir: &Path, entry: &SongEntry, config: &CorpusConfig) -> Result<LoadedSong> {
    let score_path = dir.join(&entry.score);
    let score = parse_score(&fs::read_to_string(&score_path).with_context(|| format!("reading {}", score_path.display()))?)
        .with_context(|| format!("parsing {}", score_path.display()))?;
    let align_path = dir.join(&entry.alignment);
    let align_text = fs::read_to_string(&align_path).with_context(|| format!("reading {}", align_path.display()))?;
    let alignment = parse_alignment(&align_text).with_context(|| format!("parsing {}", align_path.display()))?;
    check_symbols(&align_text, &score).with_context(|| format!("checking {}", align_path.display()))?;
    alignment.check_covers(&score)?;
    let feat_path = dir.join(&entry.features);
    let ff = read_features(&feat_path).with_context(|| format!("reading {}", feat_path.display()))?;
    if ff.names != config.layout.names() {
        bail!("{}: channels {:?} do not match the corpus layout", feat_path.display(), ff.names);
    }
    ensure!(
        ff.frames == entry.frames && alignment.total_frames() == entry.frames,
        "song {}: manifest lists {} frames, features have {}, alignment covers {}",
        entry.index,
        entry.frames,
        ff.frames,
        alignment.total_frames()
    );
    ensure!(
        alignment.entries.len() == entry.states,
        "song {}: manifest lists {} states, alignment has {}",
        entry.index,
        entry.states,
        alignment.entries.len()
    );
    Ok(LoadedSong {
        entry: entry.clone(),
        score,
        alignment,
        acoustic: ff.to_matrix(),
    })
}

pub fn load_corpus(dir: &Path) -> Result<LoadedCorpus> {
    let manifest = Manifest::read(dir)?;
    manifest.config.validate()?;
    let songs = manifest
        .songs
        .par_iter()
        .map(|e| load_song(dir, e, &manifest.config))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedCorpus { manifest, songs })
}
