//! Musical scores, state alignments and frame-level input features.
//!
//! # Score text format
//!
//! ```text
//! # comments start with '#' (at line start or after whitespace)
//! tempo 120        # beats per minute
//! key 0            # 0..=11, pitch class of the key
//! C4 1 k a         # pitch, duration in beats, phonemes
//! R 0.5            # rest; phonemes optional (defaults to `pau`)
//! A#4 1.5 s a
//! ```
//!
//! Pitches are scientific pitch names (`C4` is MIDI 60, `A4` is 440 Hz) with
//! optional `#`/`b` accidentals, or a bare MIDI number. Header lines may
//! appear in any order but before the first note.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Phoneme used for rests.
pub const SILENCE: &str = "pau";

/// Number of per-frame position features.
pub const POSITION_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pitch {
    /// MIDI note number.
    Note(i32),
    Rest,
}

impl Pitch {
    pub fn midi(self) -> Option<i32> {
        match self {
            Pitch::Note(m) => Some(m),
            Pitch::Rest => None,
        }
    }

    pub fn frequency(self) -> Option<f64> {
        self.midi().map(midi_to_hz)
    }
}

pub fn midi_to_hz(midi: i32) -> f64 {
    440.0 * libm::pow(2.0, (midi as f64 - 69.0) / 12.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub pitch: Pitch,
    pub beats: f64,
    pub phonemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub tempo: f64,
    pub key: u8,
    pub notes: Vec<Note>,
}

impl Score {
    pub fn validate(&self) -> Result<()> {
        if !(self.tempo > 0.0 && self.tempo.is_finite()) {
            return Err(Error::InvalidScore(format!("tempo {} must be positive", self.tempo)));
        }
        if self.key > 11 {
            return Err(Error::InvalidScore(format!("key {} outside 0..=11", self.key)));
        }
        for (i, n) in self.notes.iter().enumerate() {
            if !(n.beats > 0.0 && n.beats.is_finite()) {
                return Err(Error::InvalidScore(format!(
                    "note {i} has non-positive duration {}",
                    n.beats
                )));
            }
            if n.phonemes.is_empty() {
                return Err(Error::InvalidScore(format!("note {i} has no phonemes")));
            }
        }
        Ok(())
    }

    pub fn seconds_per_beat(&self) -> f64 {
        60.0 / self.tempo
    }

    /// Nominal length of note `i` in seconds.
    pub fn note_seconds(&self, i: usize) -> f64 {
        self.notes[i].beats * self.seconds_per_beat()
    }

    pub fn total_seconds(&self) -> f64 {
        self.notes.iter().map(|n| n.beats).sum::<f64>() * self.seconds_per_beat()
    }

    /// Flattened phoneme sequence as `(note index, symbol)`.
    pub fn phoneme_sequence(&self) -> Vec<(usize, &str)> {
        self.notes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.phonemes.iter().map(move |p| (i, p.as_str())))
            .collect()
    }

    /// Serialize in the score text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tempo {}", self.tempo);
        let _ = writeln!(s, "key {}", self.key);
        for n in &self.notes {
            match n.pitch {
                Pitch::Rest => {
                    let _ = write!(s, "R {}", n.beats);
                }
                Pitch::Note(m) => {
                    let _ = write!(s, "{} {}", pitch_name(m), n.beats);
                }
            }
            for p in &n.phonemes {
                let _ = write!(s, " {p}");
            }
            s.push('\n');
        }
        s
    }
}

const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

pub fn pitch_name(midi: i32) -> String {
    let octave = midi.div_euclid(12) - 1;
    format!("{}{}", NOTE_NAMES[midi.rem_euclid(12) as usize], octave)
}

/// Parse a pitch name such as `C4`, `F#3`, `Bb5`, or a MIDI number.
pub fn parse_pitch(token: &str) -> Option<Pitch> {
    if token == "R" || token == "r" {
        return Some(Pitch::Rest);
    }
    if let Ok(m) = token.parse::<i32>() {
        return (0..=127).contains(&m).then_some(Pitch::Note(m));
    }
    let mut chars = token.chars();
    let base = match chars.next()?.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let rest = chars.as_str();
    let (accidental, octave) = if let Some(r) = rest.strip_prefix('#') {
        (1, r)
    } else if let Some(r) = rest.strip_prefix('b') {
        (-1, r)
    } else {
        (0, rest)
    };
    let octave: i32 = octave.parse().ok()?;
    let midi = (octave + 1) * 12 + base + accidental;
    (0..=127).contains(&midi).then_some(Pitch::Note(midi))
}

/// `#` starts a comment at the beginning of a line or after whitespace, so
/// sharps such as `F#4` survive.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// Parse and validate a score from its text form.
pub fn parse_score(text: &str) -> Result<Score> {
    let mut tempo = None;
    let mut key = None;
    let mut notes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut fields = line.split_whitespace();
        let head = fields.next().unwrap_or_default();
        match head {
            "tempo" | "key" => {
                if !notes.is_empty() {
                    return Err(err(format!("`{head}` after the first note")));
                }
                let value = fields
                    .next()
                    .ok_or_else(|| err(format!("`{head}` needs a value")))?;
                if fields.next().is_some() {
                    return Err(err(format!("trailing fields after `{head}`")));
                }
                if head == "tempo" {
                    let t: f64 = value
                        .parse()
                        .map_err(|_| err(format!("tempo: cannot parse `{value}`")))?;
                    tempo = Some(t);
                } else {
                    let k: u8 = value
                        .parse()
                        .map_err(|_| err(format!("key: cannot parse `{value}`")))?;
                    key = Some(k);
                }
            }
            _ => {
                let pitch =
                    parse_pitch(head).ok_or_else(|| err(format!("pitch: cannot parse `{head}`")))?;
                let dur = fields
                    .next()
                    .ok_or_else(|| err("duration: missing".to_string()))?;
                let beats: f64 = dur
                    .parse()
                    .map_err(|_| err(format!("duration: cannot parse `{dur}`")))?;
                if !(beats > 0.0 && beats.is_finite()) {
                    return Err(Error::InvalidScore(format!(
                        "line {line_no}: duration must be positive, found {beats}"
                    )));
                }
                let mut phonemes: Vec<String> = fields.map(ToString::to_string).collect();
                if phonemes.is_empty() {
                    if pitch == Pitch::Rest {
                        phonemes.push(SILENCE.to_string());
                    } else {
                        return Err(err("phonemes: a pitched note needs at least one".to_string()));
                    }
                }
                notes.push(Note {
                    pitch,
                    beats,
                    phonemes,
                });
            }
        }
    }
    let score = Score {
        tempo: tempo.ok_or(Error::Parse {
            line: 0,
            message: "missing `tempo` header".to_string(),
        })?,
        key: key.unwrap_or(0),
        notes,
    };
    score.validate()?;
    Ok(score)
}

/// One aligned HSMM-style state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedState {
    /// Index into [`Score::phoneme_sequence`].
    pub phoneme: usize,
    /// 1-based state index within the phoneme.
    pub state: usize,
    pub start: usize,
    pub end: usize,
}

impl AlignedState {
    pub fn frames(&self) -> usize {
        self.end - self.start
    }
}

/// State-level segmentation of the frame axis (a Viterbi path surrogate).
#[derive(Debug, Clone, PartialEq)]
pub struct StateAlignment {
    pub states_per_phoneme: usize,
    pub frame_shift: f64,
    pub entries: Vec<AlignedState>,
}

impl StateAlignment {
    pub fn total_frames(&self) -> usize {
        self.entries.last().map_or(0, |e| e.end)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.states_per_phoneme;
        if s == 0 {
            return Err(Error::InvalidAlignment("zero states per phoneme".into()));
        }
        if !(self.frame_shift > 0.0) {
            return Err(Error::InvalidAlignment("frame shift must be positive".into()));
        }
        let mut expected_start = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.start != expected_start {
                return Err(Error::InvalidAlignment(format!(
                    "entry {i} starts at {} but previous ended at {expected_start}",
                    e.start
                )));
            }
            if e.end <= e.start {
                return Err(Error::InvalidAlignment(format!("entry {i} is empty")));
            }
            let (want_phoneme, want_state) = (i / s, i % s + 1);
            if e.phoneme != want_phoneme || e.state != want_state {
                return Err(Error::InvalidAlignment(format!(
                    "entry {i} is phoneme {} state {}, expected phoneme {want_phoneme} state {want_state}",
                    e.phoneme, e.state
                )));
            }
            expected_start = e.end;
        }
        if !self.entries.len().is_multiple_of(s) {
            return Err(Error::InvalidAlignment(
                "last phoneme has an incomplete state sequence".into(),
            ));
        }
        Ok(())
    }

    pub fn phoneme_count(&self) -> usize {
        self.entries.len() / self.states_per_phoneme.max(1)
    }

    /// Frame range `[start, end)` of phoneme `p`.
    pub fn phoneme_span(&self, p: usize) -> (usize, usize) {
        let s = self.states_per_phoneme;
        (self.entries[p * s].start, self.entries[p * s + s - 1].end)
    }

    /// Alignment entry index for every frame.
    pub fn frame_to_entry(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_frames());
        for (i, e) in self.entries.iter().enumerate() {
            out.extend(core::iter::repeat_n(i, e.frames()));
        }
        out
    }

    /// Check that the alignment and score describe the same phoneme sequence.
    pub fn check_covers(&self, score: &Score) -> Result<()> {
        self.validate()?;
        let n = score.phoneme_sequence().len();
        if self.phoneme_count() != n {
            return Err(Error::InvalidAlignment(format!(
                "alignment has {} phonemes, score has {n}",
                self.phoneme_count()
            )));
        }
        Ok(())
    }
}

/// Natural-log F0 of the note under each frame; rests are bridged linearly
/// between the neighbouring pitched frames and held at the edges.
pub fn note_logf0_track(score: &Score, align: &StateAlignment) -> Result<Vec<f64>> {
    align.check_covers(score)?;
    let phonemes = score.phoneme_sequence();
    let s = align.states_per_phoneme;
    let mut track: Vec<Option<f64>> = Vec::with_capacity(align.total_frames());
    for e in &align.entries {
        let note = phonemes[e.phoneme].0;
        let v = score.notes[note].pitch.frequency().map(libm::log);
        track.extend(core::iter::repeat_n(v, e.frames()));
    }
    debug_assert_eq!(align.entries.len() % s, 0);
    let anchors: Vec<usize> = (0..track.len()).filter(|&i| track[i].is_some()).collect();
    let (&first, &last) = match (anchors.first(), anchors.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::NoPitchAnchor),
    };
    let mut out = vec![0.0; track.len()];
    for i in 0..track.len() {
        out[i] = match track[i] {
            Some(v) => v,
            None if i < first => track[first].unwrap(),
            None if i > last => track[last].unwrap(),
            None => {
                // i lies strictly inside a rest run bounded by pitched frames.
                let lo = anchors[anchors.partition_point(|&a| a < i) - 1];
                let hi = anchors[anchors.partition_point(|&a| a < i)];
                let (a, b) = (track[lo].unwrap(), track[hi].unwrap());
                a + (b - a) * (i - lo) as f64 / (hi - lo) as f64
            }
        };
    }
    Ok(out)
}

/// Layout of the state-level context vector.
///
/// Binary block: previous/current/next phoneme one-hot, state index one-hot,
/// key one-hot and three rest flags. Numerical block: see
/// [`NUMERIC_FEATURES`]. Either block can be zero-padded to a fixed width.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContextConfig {
    pub inventory: Vec<String>,
    pub states_per_phoneme: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub binary_width: Option<usize>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub numeric_width: Option<usize>,
}

pub const NUMERIC_FEATURES: [&str; 8] = [
    "note_midi",
    "prev_note_midi",
    "next_note_midi",
    "note_frames",
    "note_beats",
    "phonemes_in_note",
    "phoneme_index_in_note",
    "tempo",
];

const REST_FLAGS: [&str; 3] = ["is_rest", "prev_is_rest", "next_is_rest"];

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            inventory: ["pau", "a", "i", "u", "e", "o", "k", "s", "t", "m"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            states_per_phoneme: 5,
            binary_width: None,
            numeric_width: None,
        }
    }
}

impl ContextConfig {
    /// The full-size layout: 724 binary and 122 numerical columns.
    pub fn full_scale(inventory: Vec<String>, states_per_phoneme: usize) -> Self {
        Self {
            inventory,
            states_per_phoneme,
            binary_width: Some(724),
            numeric_width: Some(122),
        }
    }

    fn base_binary(&self) -> usize {
        3 * self.inventory.len() + self.states_per_phoneme + 12 + REST_FLAGS.len()
    }

    pub fn binary_dim(&self) -> usize {
        self.binary_width.unwrap_or(0).max(self.base_binary())
    }

    pub fn numeric_dim(&self) -> usize {
        self.numeric_width.unwrap_or(0).max(NUMERIC_FEATURES.len())
    }

    pub fn dim(&self) -> usize {
        self.binary_dim() + self.numeric_dim()
    }

    pub fn phoneme_index(&self, symbol: &str) -> Result<usize> {
        self.inventory
            .iter()
            .position(|p| p == symbol)
            .ok_or_else(|| Error::UnknownPhoneme(symbol.to_string()))
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for ctx in ["prev", "cur", "next"] {
            for p in &self.inventory {
                names.push(format!("{ctx}_ph={p}"));
            }
        }
        for s in 1..=self.states_per_phoneme {
            names.push(format!("state={s}"));
        }
        for k in 0..12 {
            names.push(format!("key={k}"));
        }
        names.extend(REST_FLAGS.iter().map(|s| s.to_string()));
        for i in self.base_binary()..self.binary_dim() {
            names.push(format!("binary_pad{i}"));
        }
        names.extend(NUMERIC_FEATURES.iter().map(|s| s.to_string()));
        for i in NUMERIC_FEATURES.len()..self.numeric_dim() {
            names.push(format!("numeric_pad{i}"));
        }
        names
    }
}

/// One context vector per alignment entry (state), unnormalized.
pub fn encode_context_features(
    score: &Score,
    align: &StateAlignment,
    config: &ContextConfig,
) -> Result<Matrix> {
    align.check_covers(score)?;
    if align.states_per_phoneme != config.states_per_phoneme {
        return Err(Error::Config(format!(
            "alignment has {} states per phoneme, context layout expects {}",
            align.states_per_phoneme, config.states_per_phoneme
        )));
    }
    let phonemes = score.phoneme_sequence();
    let ids = phonemes
        .iter()
        .map(|(_, p)| config.phoneme_index(p))
        .collect::<Result<Vec<_>>>()?;

    // Frame extent and phoneme offset of every note.
    let s = align.states_per_phoneme;
    let n_notes = score.notes.len();
    let mut note_frames = vec![0usize; n_notes];
    let mut first_phoneme = vec![usize::MAX; n_notes];
    for (pi, (note, _)) in phonemes.iter().enumerate() {
        let (a, b) = align.phoneme_span(pi);
        note_frames[*note] += b - a;
        first_phoneme[*note] = first_phoneme[*note].min(pi);
    }

    let p = config.inventory.len();
    let nb = config.binary_dim();
    let mut out = Matrix::zeros(align.entries.len(), config.dim());
    let midi_or_zero = |i: usize| score.notes[i].pitch.midi().map_or(0.0, |m| m as f64);
    for (row, e) in align.entries.iter().enumerate() {
        let pi = e.phoneme;
        let note = phonemes[pi].0;
        let v = out.row_mut(row);
        if pi > 0 {
            v[ids[pi - 1]] = 1.0;
        }
        v[p + ids[pi]] = 1.0;
        if pi + 1 < ids.len() {
            v[2 * p + ids[pi + 1]] = 1.0;
        }
        v[3 * p + e.state - 1] = 1.0;
        v[3 * p + s + score.key as usize] = 1.0;
        let flags = 3 * p + s + 12;
        let is_rest = |i: usize| score.notes[i].pitch == Pitch::Rest;
        v[flags] = f64::from(u8::from(is_rest(note)));
        v[flags + 1] = f64::from(u8::from(note > 0 && is_rest(note - 1)));
        v[flags + 2] = f64::from(u8::from(note + 1 < n_notes && is_rest(note + 1)));

        let num = &mut v[nb..];
        num[0] = midi_or_zero(note);
        num[1] = if note > 0 { midi_or_zero(note - 1) } else { 0.0 };
        num[2] = if note + 1 < n_notes { midi_or_zero(note + 1) } else { 0.0 };
        num[3] = note_frames[note] as f64;
        num[4] = score.notes[note].beats;
        num[5] = score.notes[note].phonemes.len() as f64;
        num[6] = (pi - first_phoneme[note] + 1) as f64;
        num[7] = score.tempo;
        // remaining numeric columns are zero padding
        let _ = s;
    }
    Ok(out)
}

/// Per-frame position features: forward index in state, backward index in
/// state, relative position in state, state duration, relative position in
/// phoneme. Relative positions of single-frame spans are 0.
pub fn position_features(align: &StateAlignment) -> Result<Matrix> {
    align.validate()?;
    let mut out = Matrix::zeros(align.total_frames(), POSITION_FEATURES);
    let s = align.states_per_phoneme;
    for (i, e) in align.entries.iter().enumerate() {
        let dur = e.frames();
        let (ps, pe) = align.phoneme_span(i / s);
        for f in e.start..e.end {
            let fwd = f - e.start;
            let row = out.row_mut(f);
            row[0] = fwd as f64;
            row[1] = (dur - 1 - fwd) as f64;
            row[2] = ratio(fwd, dur - 1);
            row[3] = dur as f64;
            row[4] = ratio(f - ps, pe - ps - 1);
        }
    }
    Ok(out)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub const POSITION_NAMES: [&str; POSITION_FEATURES] = [
    "pos_forward",
    "pos_backward",
    "pos_in_state",
    "state_frames",
    "pos_in_phoneme",
];

/// Frame-level model input.
///
/// The first `state_cols` columns are state-level context (constant within
/// each alignment entry); the remaining columns are frame-level (note logF0
/// and position features).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureMatrix {
    pub values: Matrix,
    pub names: Vec<String>,
    pub state_cols: usize,
}

impl FrameFeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn frame_cols(&self) -> usize {
        self.values.cols() - self.state_cols
    }

    pub fn state_part(&self) -> Matrix {
        let idx: Vec<usize> = (0..self.state_cols).collect();
        self.values.select_cols(&idx)
    }

    pub fn frame_part(&self) -> Matrix {
        let idx: Vec<usize> = (self.state_cols..self.values.cols()).collect();
        self.values.select_cols(&idx)
    }
}

/// Repeat each state vector over its frame span and append `frame_cols`.
pub fn expand_to_frames(
    state_vectors: &Matrix,
    align: &StateAlignment,
    frame_cols: &Matrix,
) -> Result<Matrix> {
    if state_vectors.rows() != align.entries.len() {
        return Err(Error::Shape(format!(
            "{} state vectors for {} alignment entries",
            state_vectors.rows(),
            align.entries.len()
        )));
    }
    let frames = align.total_frames();
    if frame_cols.rows() != frames {
        return Err(Error::Shape(format!(
            "{} frame-level rows for {frames} aligned frames",
            frame_cols.rows()
        )));
    }
    let sc = state_vectors.cols();
    let mut out = Matrix::zeros(frames, sc + frame_cols.cols());
    for (i, e) in align.entries.iter().enumerate() {
        for f in e.start..e.end {
            let row = out.row_mut(f);
            row[..sc].copy_from_slice(state_vectors.row(i));
            row[sc..].copy_from_slice(frame_cols.row(f));
        }
    }
    Ok(out)
}

/// Frame-level columns: note logF0 followed by the position features.
pub fn frame_level_features(score: &Score, align: &StateAlignment) -> Result<Matrix> {
    let lf0 = note_logf0_track(score, align)?;
    let lf0 = Matrix::from_vec(lf0.len(), 1, lf0)?;
    lf0.hcat(&position_features(align)?)
}

/// Context vectors, note logF0 and position features for a whole score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFeatures {
    /// One row per alignment entry.
    pub state_vectors: Matrix,
    /// One row per frame.
    pub frame_level: Matrix,
    pub frames: FrameFeatureMatrix,
}

pub fn score_features(
    score: &Score,
    align: &StateAlignment,
    config: &ContextConfig,
) -> Result<ScoreFeatures> {
    let state_vectors = encode_context_features(score, align, config)?;
    let frame_level = frame_level_features(score, align)?;
    let values = expand_to_frames(&state_vectors, align, &frame_level)?;
    let mut names = config.column_names();
    names.push("note_lf0".to_string());
    names.extend(POSITION_NAMES.iter().map(|s| s.to_string()));
    Ok(ScoreFeatures {
        frames: FrameFeatureMatrix {
            values,
            names,
            state_cols: state_vectors.cols(),
        },
        state_vectors,
        frame_level,
    })
}

/// Per-column min–max statistics and the target range.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Input features map to `[0, 1]`.
pub const INPUT_RANGE: (f64, f64) = (0.0, 1.0);
/// Output features map to `[0.01, 0.99]`.
pub const OUTPUT_RANGE: (f64, f64) = (0.01, 0.99);

pub fn fit_normalization<'a, I>(matrices: I, range: (f64, f64)) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a Matrix>,
{
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::Config(format!("normalization range ({lo}, {hi}) is empty")));
    }
    let mut stats: Option<(Vec<f64>, Vec<f64>)> = None;
    for m in matrices {
        let (min, max) = stats.get_or_insert_with(|| {
            (vec![f64::INFINITY; m.cols()], vec![f64::NEG_INFINITY; m.cols()])
        });
        if m.cols() != min.len() {
            return Err(Error::Shape(format!(
                "matrix with {} columns in a {}-column corpus",
                m.cols(),
                min.len()
            )));
        }
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    let (mut min, mut max) = stats.ok_or(Error::EmptySequence)?;
    for c in 0..min.len() {
        if min[c] > max[c] {
            // column never observed (all matrices empty)
            min[c] = 0.0;
            max[c] = 0.0;
        }
    }
    Ok(NormalizationStats { min, max, lo, hi })
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, statistics cover {}",
                m.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize_value(&self, c: usize, v: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span > 0.0 {
            self.lo + (v - self.min[c]) / span * (self.hi - self.lo)
        } else {
            0.5 * (self.lo + self.hi)
        }
    }

    #[inline]
    pub fn denormalize_value(&self, c: usize, v: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span > 0.0 {
            self.min[c] + (v - self.lo) / (self.hi - self.lo) * span
        } else {
            self.min[c]
        }
    }

    /// Multiplier from normalized to natural units for column `c`.
    pub fn scale(&self, c: usize) -> f64 {
        (self.max[c] - self.min[c]) / (self.hi - self.lo)
    }

    pub fn normalize(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.normalize_value(c, *v);
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.denormalize_value(c, *v);
            }
        }
        Ok(out)
    }

    /// Statistics for a subset of columns.
    pub fn select(&self, cols: &[usize]) -> NormalizationStats {
        NormalizationStats {
            min: cols.iter().map(|&c| self.min[c]).collect(),
            max: cols.iter().map(|&c| self.max[c]).collect(),
            lo: self.lo,
            hi: self.hi,
        }
    }
}
