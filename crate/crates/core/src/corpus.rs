//! Seeded synthetic singing corpus.
//!
//! Each song is drawn from its own RNG stream, so songs can be generated
//! independently and in any order. The generative model:
//!
//! - Score: a leading and trailing one-beat rest around `notes_per_song`
//!   notes. Pitches follow a bounded random walk, durations are drawn from
//!   {0.5, 0.5, 0.5, 1, 1, 1.5} beats, a non-initial note is a rest with
//!   probability `rest_probability` (never two rests in a row), and each
//!   pitched note sings one CV or V syllable.
//! - Alignment: note boundaries are the cumulative beat times rounded to
//!   frames. Within a note, every state gets one frame and the remaining
//!   frames are shared in proportion to `base * exp(sigma * z)` (largest
//!   remainder, ties to the earlier state), where `base` is
//!   [`CONSONANT_WEIGHT`] for consonants and 1 otherwise and `z` is a
//!   standard normal draw (0 for the nominal aligner).
//! - Acoustics (see [`oracle_features`]): per-phoneme mel-cepstrum and
//!   aperiodicity templates, `c0` raised by [`C0_PER_SEMITONE`] per
//!   semitone above MIDI 60, voicing from the phoneme class, and vibrato on
//!   pitched notes of at least `vibrato_min_seconds`. The depth channel is 0
//!   off those notes and the rate channel follows the note pitch track
//!   everywhere, so both are local functions of the score. Continuous
//!   channels are
//!   smoothed by a centred box filter of half-width `smoothing_frames`
//!   applied twice with edge replication; the vibrato sinusoid is added to
//!   logF0 after smoothing and the flags are not smoothed.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;
use crate::score::{note_logf0_track, AlignedState, ContextConfig, Note, Pitch, Score, StateAlignment, SILENCE};
use crate::vocoder::AcousticLayout;
use crate::{Error, Result};

pub const VOWELS: [&str; 5] = ["a", "i", "u", "e", "o"];
/// Phonemes rendered without voicing.
pub const UNVOICED: [&str; 7] = [SILENCE, "k", "s", "t", "p", "h", "f"];
pub const CONSONANT_WEIGHT: f64 = 0.35;
pub const C0_PER_SEMITONE: f64 = 0.02;
const BEAT_CHOICES: [f64; 6] = [0.5, 0.5, 0.5, 1.0, 1.0, 1.5];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CorpusConfig {
    pub seed: u64,
    pub songs: usize,
    /// The last `test_songs` songs form the held-out split.
    pub test_songs: usize,
    pub notes_per_song: usize,
    pub context: ContextConfig,
    pub tempo_range: (u32, u32),
    pub pitch_range: (i32, i32),
    pub rest_probability: f64,
    pub frame_shift: f64,
    pub duration_sigma: f64,
    pub layout: AcousticLayout,
    pub smoothing_frames: usize,
    pub vibrato_min_seconds: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 20240,
            songs: 60,
            test_songs: 10,
            notes_per_song: 12,
            context: ContextConfig::default(),
            tempo_range: (110, 150),
            pitch_range: (57, 74),
            rest_probability: 0.1,
            frame_shift: 0.005,
            duration_sigma: 0.25,
            layout: AcousticLayout::default(),
            smoothing_frames: 6,
            vibrato_min_seconds: 0.4,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.songs == 0 || self.test_songs >= self.songs {
            return err(format!(
                "{} test songs out of {} leaves no training data",
                self.test_songs, self.songs
            ));
        }
        if self.notes_per_song == 0 {
            return err("songs need at least one note".into());
        }
        if self.tempo_range.0 == 0 || self.tempo_range.0 > self.tempo_range.1 {
            return err(format!("tempo range {:?} is invalid", self.tempo_range));
        }
        if self.pitch_range.0 > self.pitch_range.1 {
            return err(format!("pitch range {:?} is invalid", self.pitch_range));
        }
        if !(0.0..1.0).contains(&self.rest_probability) {
            return err(format!("rest probability {} outside [0, 1)", self.rest_probability));
        }
        if !(self.frame_shift > 0.0) || !(self.duration_sigma >= 0.0) {
            return err("frame shift must be positive and duration sigma non-negative".into());
        }
        let ctx = &self.context;
        if !ctx.inventory.iter().any(|p| p == SILENCE) {
            return err(format!("inventory must contain '{SILENCE}'"));
        }
        if !ctx.inventory.iter().any(|p| is_vowel(p)) {
            return err("inventory must contain a vowel".into());
        }
        Ok(())
    }

    pub fn train_indices(&self) -> core::ops::Range<usize> {
        0..self.songs - self.test_songs
    }

    pub fn test_indices(&self) -> core::ops::Range<usize> {
        self.songs - self.test_songs..self.songs
    }

    fn vowels(&self) -> Vec<&str> {
        self.context.inventory.iter().map(String::as_str).filter(|p| is_vowel(p)).collect()
    }

    fn consonants(&self) -> Vec<&str> {
        self.context
            .inventory
            .iter()
            .map(String::as_str)
            .filter(|p| !is_vowel(p) && *p != SILENCE)
            .collect()
    }
}

pub fn is_vowel(p: &str) -> bool {
    VOWELS.contains(&p)
}

pub fn is_voiced(p: &str) -> bool {
    !UNVOICED.contains(&p)
}

fn song_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Draw a score from the song's RNG stream.
pub fn generate_score(cfg: &CorpusConfig, rng: &mut impl Rng) -> Score {
    let tempo = rng.gen_range(cfg.tempo_range.0..=cfg.tempo_range.1) as f64;
    let key = rng.gen_range(0..12u8);
    let (lo, hi) = cfg.pitch_range;
    let mut midi = rng.gen_range(lo..=hi);
    let vowels = cfg.vowels();
    let consonants = cfg.consonants();
    let rest = |beats| Note {
        pitch: Pitch::Rest,
        beats,
        phonemes: vec![SILENCE.to_string()],
    };
    let mut notes = vec![rest(1.0)];
    let mut prev_rest = true;
    for _ in 0..cfg.notes_per_song {
        let beats = BEAT_CHOICES[rng.gen_range(0..BEAT_CHOICES.len())];
        if !prev_rest && rng.gen::<f64>() < cfg.rest_probability {
            notes.push(rest(beats));
            prev_rest = true;
            continue;
        }
        midi = (midi + rng.gen_range(-4..=4)).clamp(lo, hi);
        let mut phonemes = Vec::with_capacity(2);
        if !consonants.is_empty() && rng.gen::<f64>() < 0.6 {
            phonemes.push(consonants[rng.gen_range(0..consonants.len())].to_string());
        }
        phonemes.push(vowels[rng.gen_range(0..vowels.len())].to_string());
        notes.push(Note {
            pitch: Pitch::Note(midi),
            beats,
            phonemes,
        });
        prev_rest = false;
    }
    notes.push(rest(1.0));
    Score { tempo, key, notes }
}

/// Share `total` frames among `weights.len()` states: one frame each, the
/// rest in proportion to the weights by largest remainder.
pub fn allocate_frames(total: usize, weights: &[f64]) -> Result<Vec<usize>> {
    let n = weights.len();
    if total < n {
        return Err(Error::InvalidScore(format!("{total} frames cannot hold {n} states")));
    }
    let spare = (total - n) as f64;
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| spare * w / sum).collect();
    let mut out: Vec<usize> = shares.iter().map(|s| 1 + libm::floor(*s) as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - libm::floor(shares[a]);
        let fb = shares[b] - libm::floor(shares[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Ok(out)
}

/// Frame index at which each note starts, plus the end frame.
pub fn note_boundaries(score: &Score, frame_shift: f64) -> Vec<usize> {
    let spb = score.seconds_per_beat();
    let mut beats = 0.0;
    let mut out = vec![0];
    for n in &score.notes {
        beats += n.beats;
        out.push(libm::round(beats * spb / frame_shift) as usize);
    }
    out
}

fn align(score: &Score, cfg: &CorpusConfig, mut jitter: impl FnMut() -> f64) -> Result<StateAlignment> {
    score.validate()?;
    let s = cfg.context.states_per_phoneme;
    let bounds = note_boundaries(score, cfg.frame_shift);
    let mut entries = Vec::new();
    let mut phoneme = 0;
    for (i, note) in score.notes.iter().enumerate() {
        let mut weights = Vec::with_capacity(note.phonemes.len() * s);
        for p in &note.phonemes {
            let base = if is_vowel(p) || p == SILENCE { 1.0 } else { CONSONANT_WEIGHT };
            for _ in 0..s {
                weights.push(base * libm::exp(cfg.duration_sigma * jitter()));
            }
        }
        let frames = allocate_frames(bounds[i + 1] - bounds[i], &weights).map_err(|_| {
            Error::InvalidScore(format!(
                "note {i} lasts {} frames, too short for {} states",
                bounds[i + 1] - bounds[i],
                weights.len()
            ))
        })?;
        let mut t = bounds[i];
        for (k, n) in frames.into_iter().enumerate() {
            entries.push(AlignedState {
                phoneme: phoneme + k / s,
                state: k % s + 1,
                start: t,
                end: t + n,
            });
            t += n;
        }
        phoneme += note.phonemes.len();
    }
    let a = StateAlignment {
        states_per_phoneme: s,
        frame_shift: cfg.frame_shift,
        entries,
    };
    a.validate()?;
    Ok(a)
}

/// Deterministic alignment from the score alone (all jitter zero).
pub fn nominal_alignment(score: &Score, cfg: &CorpusConfig) -> Result<StateAlignment> {
    align(score, cfg, || 0.0)
}

/// Alignment with log-normal duration jitter drawn from `rng`.
pub fn sampled_alignment(score: &Score, cfg: &CorpusConfig, rng: &mut impl Rng) -> Result<StateAlignment> {
    align(score, cfg, || standard_normal(rng))
}

/// Target spectra per inventory phoneme.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeTemplates {
    pub mcep: Vec<Vec<f64>>,
    pub ap: Vec<Vec<f64>>,
    pub voiced: Vec<bool>,
}

/// Templates drawn from a stream derived from the corpus seed. `mcep[0]`
/// is uniform in (-1.5, -0.5) ((-5, -4) for silence) and `mcep[k]` uniform
/// in ±0.6/k; aperiodicity is uniform in (0.02, 0.3) plus 0.1 per band for
/// voiced phonemes and uniform in (0.7, 0.95) otherwise.
pub fn phoneme_templates(cfg: &CorpusConfig) -> PhonemeTemplates {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7E4D_1A7E_5EED_0001);
    let m = cfg.layout.mcep_order;
    let mut out = PhonemeTemplates {
        mcep: Vec::new(),
        ap: Vec::new(),
        voiced: Vec::new(),
    };
    for p in &cfg.context.inventory {
        let mut mc = vec![0.0; m + 1];
        mc[0] = if p == SILENCE {
            rng.gen_range(-5.0..-4.0)
        } else {
            rng.gen_range(-1.5..-0.5)
        };
        for (k, c) in mc.iter_mut().enumerate().skip(1) {
            let lim = 0.6 / k as f64;
            *c = rng.gen_range(-lim..lim);
        }
        let voiced = is_voiced(p);
        let ap = (0..cfg.layout.ap_bands)
            .map(|b| {
                if voiced {
                    rng.gen_range(0.02..0.3) + 0.1 * b as f64
                } else {
                    rng.gen_range(0.7..0.95)
                }
            })
            .collect();
        out.mcep.push(mc);
        out.ap.push(ap);
        out.voiced.push(voiced);
    }
    out
}

/// Centred moving average of half-width `half`, edge-replicated.
pub fn box_smooth(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || half == 0 {
        return x.to_vec();
    }
    let width = (2 * half + 1) as f64;
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    let mut acc: f64 = (-(half as isize)..=half as isize).map(at).sum();
    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        out.push(acc / width);
        acc += at(t + half as isize + 1) - at(t - half as isize);
    }
    out
}

fn smooth_twice(x: &[f64], half: usize) -> Vec<f64> {
    box_smooth(&box_smooth(x, half), half)
}

/// Vibrato depth in cents of a note lasting `seconds`.
pub fn vibrato_amplitude(seconds: f64) -> f64 {
    30.0 + 25.0 * seconds.min(2.0)
}

/// Vibrato rate in Hz: 4.5 at the bottom of `pitch_range`, rising linearly
/// to 6 at the top.
pub fn vibrato_frequency(midi: f64, pitch_range: (i32, i32)) -> f64 {
    let (lo, hi) = (pitch_range.0 as f64, pitch_range.1 as f64);
    let r = if hi > lo { ((midi - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    4.5 + 1.5 * r
}

fn lf0_to_midi(lf0: f64) -> f64 {
    69.0 + 12.0 * (lf0 - libm::log(440.0)) / core::f64::consts::LN_2
}

/// Ground-truth acoustic statics `T x layout.dim()` in natural units.
pub fn oracle_features(
    score: &Score,
    align: &StateAlignment,
    cfg: &CorpusConfig,
    templates: &PhonemeTemplates,
) -> Result<Matrix> {
    align.check_covers(score)?;
    let layout = cfg.layout;
    let frames = align.total_frames();
    let phonemes = score.phoneme_sequence();
    let entry = align.frame_to_entry();
    let mut raw = Matrix::zeros(frames, layout.dim());
    let mut note_of = vec![0usize; frames];
    for t in 0..frames {
        let (note, sym) = phonemes[align.entries[entry[t]].phoneme];
        note_of[t] = note;
        let p = cfg.context.phoneme_index(sym)?;
        let row = raw.row_mut(t);
        row[layout.mcep()].copy_from_slice(&templates.mcep[p]);
        if let Some(m) = score.notes[note].pitch.midi() {
            row[0] += C0_PER_SEMITONE * (m - 60) as f64;
        }
        row[layout.ap()].copy_from_slice(&templates.ap[p]);
        row[layout.vuv()] = if templates.voiced[p] && score.notes[note].pitch != Pitch::Rest {
            1.0
        } else {
            0.0
        };
    }

    // vibrato depth per note; the rate follows the note pitch track
    let amp_of: Vec<Option<f64>> = score
        .notes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let secs = score.note_seconds(i);
            (n.pitch != Pitch::Rest && secs >= cfg.vibrato_min_seconds).then(|| vibrato_amplitude(secs))
        })
        .collect();
    let known: Vec<bool> = note_of.iter().map(|&n| amp_of[n].is_some()).collect();
    let amp: Vec<f64> = note_of.iter().map(|&n| amp_of[n].unwrap_or(0.0)).collect();
    let lf0 = note_logf0_track(score, align)?;
    let freq: Vec<f64> = lf0
        .iter()
        .map(|&v| vibrato_frequency(lf0_to_midi(v), cfg.pitch_range))
        .collect();

    let mut smoothed = Matrix::zeros(frames, layout.dim());
    let mut set_col = |c: usize, v: Vec<f64>| {
        for (t, x) in v.into_iter().enumerate() {
            smoothed.set(t, c, x);
        }
    };
    for c in layout.mcep().chain(layout.ap()) {
        set_col(c, smooth_twice(&raw.column(c), cfg.smoothing_frames));
    }
    set_col(layout.lf0(), smooth_twice(&lf0, cfg.smoothing_frames));
    set_col(layout.vib_amp(), smooth_twice(&amp, cfg.smoothing_frames));
    set_col(layout.vib_freq(), smooth_twice(&freq, cfg.smoothing_frames));
    set_col(layout.vuv(), raw.column(layout.vuv()));
    set_col(layout.vib_flag(), known.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect());

    let starts = note_boundaries(score, cfg.frame_shift);
    for t in 0..frames {
        if let Some(a) = amp_of[note_of[t]] {
            let f = freq[t];
            let dt = (t - starts[note_of[t]].min(t)) as f64 * cfg.frame_shift;
            let phase = 2.0 * core::f64::consts::PI * f * dt;
            let v = smoothed.get(t, layout.lf0()) + a / 1200.0 * core::f64::consts::LN_2 * libm::sin(phase);
            smoothed.set(t, layout.lf0(), v);
        }
    }
    Ok(smoothed)
}

/// Upper bound on `|x[t+1] - x[t]|` of a smoothed channel whose unsmoothed
/// values span `range`.
pub fn smoothed_jump_bound(range: f64, cfg: &CorpusConfig) -> f64 {
    range / (2 * cfg.smoothing_frames + 1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub index: usize,
    pub score: Score,
    pub alignment: StateAlignment,
    /// `T x layout.dim()` statics.
    pub acoustic: Matrix,
}

pub fn generate_song(cfg: &CorpusConfig, templates: &PhonemeTemplates, index: usize) -> Result<Song> {
    let mut rng = song_rng(cfg.seed, index);
    let score = generate_score(cfg, &mut rng);
    let alignment = sampled_alignment(&score, cfg, &mut rng)?;
    let acoustic = oracle_features(&score, &alignment, cfg, templates)?;
    Ok(Song {
        index,
        score,
        alignment,
        acoustic,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub songs: Vec<Song>,
}

impl Corpus {
    pub fn train(&self) -> &[Song] {
        &self.songs[self.config.train_indices()]
    }

    pub fn test(&self) -> &[Song] {
        &self.songs[self.config.test_indices()]
    }

    pub fn total_frames(&self) -> usize {
        self.songs.iter().map(|s| s.alignment.total_frames()).sum()
    }

    pub fn total_states(&self) -> usize {
        self.songs.iter().map(|s| s.alignment.entries.len()).sum()
    }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let templates = phoneme_templates(cfg);
    let songs = (0..cfg.songs)
        .map(|i| generate_song(cfg, &templates, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: cfg.clone(),
        songs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::parse_score;
    use crate::testutil::*;

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            songs: 6,
            test_songs: 2,
            notes_per_song: 8,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_corpus(&small_cfg()).unwrap();
        let b = generate_corpus(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusConfig {
            seed: 1,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a.songs[0].acoustic, c.songs[0].acoustic);
    }

    #[test]
    fn songs_are_independent_of_corpus_size() {
        let a = generate_corpus(&small_cfg()).unwrap();
        let b = generate_corpus(&CorpusConfig {
            songs: 3,
            test_songs: 1,
            ..small_cfg()
        })
        .unwrap();
        assert_eq!(a.songs[..3], b.songs[..]);
    }

    #[test]
    fn splits_are_disjoint() {
        let cfg = CorpusConfig::default();
        let train: Vec<usize> = cfg.train_indices().collect();
        assert!(cfg.test_indices().all(|i| !train.contains(&i)));
        assert_eq!(train.len() + cfg.test_indices().len(), cfg.songs);
    }

    #[test]
    fn default_corpus_has_about_ten_frames_per_state() {
        let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
        let ratio = corpus.total_frames() as f64 / corpus.total_states() as f64;
        assert!((7.0..14.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn frame_allocation() {
        assert_eq!(allocate_frames(10, &[1.0, 1.0]).unwrap(), [5, 5]);
        assert_eq!(allocate_frames(3, &[1.0, 1.0, 1.0]).unwrap(), [1, 1, 1]);
        assert_eq!(allocate_frames(7, &[1.0, 1.0]).unwrap(), [4, 3]);
        let v = allocate_frames(100, &[0.35, 1.0, 2.0]).unwrap();
        assert_eq!(v.iter().sum::<usize>(), 100);
        assert!(allocate_frames(2, &[1.0; 3]).is_err());
    }

    #[test]
    fn smoothing() {
        assert_eq!(box_smooth(&[1.0, 1.0, 1.0], 2), [1.0, 1.0, 1.0]);
        let y = box_smooth(&[0.0, 0.0, 3.0, 0.0, 0.0], 1);
        assert_eq!(y, [0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn sustained_note() {
        let cfg = CorpusConfig::default();
        let score = parse_score("tempo 120\nkey 0\nA4 2 a\n").unwrap();
        let align = nominal_alignment(&score, &cfg).unwrap();
        assert_eq!(align.total_frames(), 200);
        let t = phoneme_templates(&cfg);
        let o = oracle_features(&score, &align, &cfg, &t).unwrap();
        let l = cfg.layout;
        let a = cfg.context.phoneme_index("a").unwrap();
        let (amp, f) = (vibrato_amplitude(1.0), vibrato_frequency(69.0, cfg.pitch_range));
        for frame in 0..200 {
            let mut want = t.mcep[a].clone();
            want[0] += C0_PER_SEMITONE * 9.0;
            for k in l.mcep() {
                assert_close(o.get(frame, k), want[k], 1e-12);
            }
            let vib = amp / 1200.0 * core::f64::consts::LN_2
                * libm::sin(2.0 * core::f64::consts::PI * f * frame as f64 * 0.005);
            assert_close(o.get(frame, l.lf0()), libm::log(440.0) + vib, 1e-12);
            assert_eq!(o.get(frame, l.vib_flag()), 1.0);
            assert_eq!(o.get(frame, l.vuv()), 1.0);
        }
    }

    #[test]
    fn jumps_are_bounded() {
        let cfg = CorpusConfig::default();
        let corpus = generate_corpus(&CorpusConfig {
            songs: 4,
            test_songs: 1,
            ..cfg.clone()
        })
        .unwrap();
        let t = phoneme_templates(&cfg);
        let l = cfg.layout;
        for song in &corpus.songs {
            let o = &song.acoustic;
            for c in l.mcep().chain(l.ap()) {
                let vals: Vec<f64> = (0..t.mcep.len())
                    .map(|p| if l.mcep().contains(&c) { t.mcep[p][c] } else { t.ap[p][c - l.ap().start] })
                    .collect();
                // c0 also moves with pitch
                let pitch_span = if c == 0 {
                    C0_PER_SEMITONE * (cfg.pitch_range.1 - 60).max(0) as f64
                        - C0_PER_SEMITONE * (cfg.pitch_range.0 - 60).min(0) as f64
                } else {
                    0.0
                };
                let range = vals.iter().cloned().fold(f64::MIN, f64::max)
                    - vals.iter().cloned().fold(f64::MAX, f64::min)
                    + pitch_span;
                let bound = smoothed_jump_bound(range, &cfg);
                for f in 1..o.rows() {
                    assert!((o.get(f, c) - o.get(f - 1, c)).abs() <= bound + 1e-12);
                }
            }
        }
    }

    /// Second implementation of the documented oracle, written frame by
    /// frame from the module description.
    fn reference_oracle(score: &Score, align: &StateAlignment, cfg: &CorpusConfig, t: &PhonemeTemplates) -> Matrix {
        let l = cfg.layout;
        let n = align.total_frames();
        let phonemes = score.phoneme_sequence();
        let spb = 60.0 / score.tempo;
        let mut note_start = Vec::new();
        let mut acc = 0.0;
        for note in &score.notes {
            note_start.push(libm::round(acc * spb / cfg.frame_shift) as usize);
            acc += note.beats;
        }
        let note_at = |f: usize| -> usize {
            let e = align.entries.iter().find(|e| e.start <= f && f < e.end).unwrap();
            phonemes[e.phoneme].0
        };
        let sym_at = |f: usize| -> &str {
            let e = align.entries.iter().find(|e| e.start <= f && f < e.end).unwrap();
            phonemes[e.phoneme].1
        };
        let idx = |s: &str| cfg.context.inventory.iter().position(|p| p == s).unwrap();
        let smooth = |x: &[f64]| -> Vec<f64> {
            let h = cfg.smoothing_frames as isize;
            let pass = |v: &[f64]| -> Vec<f64> {
                (0..v.len() as isize)
                    .map(|i| {
                        (-h..=h).map(|j| v[(i + j).clamp(0, v.len() as isize - 1) as usize]).sum::<f64>()
                            / (2 * h + 1) as f64
                    })
                    .collect()
            };
            pass(&pass(x))
        };
        let is_vib = |k: usize| {
            let secs = score.notes[k].beats * spb;
            score.notes[k].pitch != Pitch::Rest && secs >= cfg.vibrato_min_seconds
        };
        let rate_track = || -> Vec<f64> {
            note_logf0_track(score, align)
                .unwrap()
                .iter()
                .map(|&v| {
                    let midi = 69.0 + 12.0 * libm::log2(libm::exp(v) / 440.0);
                    let r = ((midi - cfg.pitch_range.0 as f64) / (cfg.pitch_range.1 - cfg.pitch_range.0) as f64).clamp(0.0, 1.0);
                    4.5 + 1.5 * r
                })
                .collect()
        };
        let mut out = Matrix::zeros(n, l.dim());
        for c in 0..l.dim() {
            let raw: Vec<f64> = (0..n)
                .map(|f| {
                    let k = note_at(f);
                    let p = idx(sym_at(f));
                    let midi = score.notes[k].pitch.midi();
                    if l.mcep().contains(&c) {
                        t.mcep[p][c] + if c == 0 { midi.map_or(0.0, |m| 0.02 * (m - 60) as f64) } else { 0.0 }
                    } else if l.ap().contains(&c) {
                        t.ap[p][c - l.ap().start]
                    } else {
                        0.0
                    }
                })
                .collect();
            let col: Vec<f64> = if c == l.lf0() {
                smooth(&note_logf0_track(score, align).unwrap())
            } else if c == l.vuv() {
                (0..n)
                    .map(|f| {
                        let voiced = !["pau", "k", "s", "t", "p", "h", "f"].contains(&sym_at(f));
                        if voiced && score.notes[note_at(f)].pitch != Pitch::Rest { 1.0 } else { 0.0 }
                    })
                    .collect()
            } else if c == l.vib_flag() {
                (0..n).map(|f| if is_vib(note_at(f)) { 1.0 } else { 0.0 }).collect()
            } else if c == l.vib_amp() {
                let v: Vec<f64> = (0..n)
                    .map(|f| {
                        let k = note_at(f);
                        if is_vib(k) { 30.0 + 25.0 * (score.notes[k].beats * spb).min(2.0) } else { 0.0 }
                    })
                    .collect();
                smooth(&v)
            } else if c == l.vib_freq() {
                smooth(&rate_track())
            } else {
                smooth(&raw)
            };
            for (f, v) in col.into_iter().enumerate() {
                out.set(f, c, v);
            }
        }
        for f in 0..n {
            let k = note_at(f);
            if is_vib(k) {
                let secs = score.notes[k].beats * spb;
                let a = 30.0 + 25.0 * secs.min(2.0);
                let fr = rate_track()[f];
                let dt = (f - note_start[k]) as f64 * cfg.frame_shift;
                let v = out.get(f, l.lf0())
                    + a / 1200.0 * libm::log(2.0) * libm::sin(2.0 * core::f64::consts::PI * fr * dt);
                out.set(f, l.lf0(), v);
            }
        }
        out
    }

    #[test]
    fn oracle_matches_independent_implementation() {
        let cfg = small_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let t = phoneme_templates(&cfg);
        for song in &corpus.songs {
            let want = reference_oracle(&song.score, &song.alignment, &cfg, &t);
            let diff = song.acoustic.max_abs_diff(&want);
            assert!(diff <= 1e-9, "song {}: {diff}", song.index);
        }
    }

    #[test]
    fn nominal_alignment_is_deterministic_and_covers_score() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let cfg = &corpus.config;
        for song in &corpus.songs {
            let a = nominal_alignment(&song.score, cfg).unwrap();
            assert_eq!(a, nominal_alignment(&song.score, cfg).unwrap());
            a.check_covers(&song.score).unwrap();
            assert_eq!(a.total_frames(), song.alignment.total_frames());
        }
    }
}
