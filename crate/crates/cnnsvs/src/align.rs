//! Text form of state alignments.
//!
//! ```text
//! states_per_phoneme 5
//! frame_shift 0.005
//! # start end phoneme state symbol
//! 0 12 0 1 pau
//! ```
//!
//! `phoneme` indexes the score's phoneme sequence and `state` is 1-based.
//! The symbol column is informational and checked against the score by
//! [`check_symbols`].

use std::fmt::Write;

use cnnsvs_core::score::{AlignedState, Score, StateAlignment};
use cnnsvs_core::Error;

pub fn alignment_to_text(align: &StateAlignment, score: &Score) -> String {
    let phonemes = score.phoneme_sequence();
    let mut s = String::new();
    let _ = writeln!(s, "states_per_phoneme {}", align.states_per_phoneme);
    let _ = writeln!(s, "frame_shift {}", align.frame_shift);
    let _ = writeln!(s, "# start end phoneme state symbol");
    for e in &align.entries {
        let sym = phonemes.get(e.phoneme).map_or("?", |p| p.1);
        let _ = writeln!(s, "{} {} {} {} {sym}", e.start, e.end, e.phoneme, e.state);
    }
    s
}

pub fn parse_alignment(text: &str) -> Result<StateAlignment, Error> {
    let mut states = None;
    let mut shift = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "states_per_phoneme" if fields.len() == 2 => {
                states = Some(fields[1].parse::<usize>().map_err(|e| err(format!("states_per_phoneme: {e}")))?)
            }
            "frame_shift" if fields.len() == 2 => {
                shift = Some(fields[1].parse::<f64>().map_err(|e| err(format!("frame_shift: {e}")))?)
            }
            _ if fields.len() == 4 || fields.len() == 5 => {
                let mut n = [0usize; 4];
                for (k, (slot, name)) in n.iter_mut().zip(["start", "end", "phoneme", "state"]).enumerate() {
                    *slot = fields[k].parse().map_err(|e| err(format!("{name}: {e}")))?;
                }
                if n[1] <= n[0] {
                    return Err(err(format!("empty state {}..{}", n[0], n[1])));
                }
                entries.push(AlignedState {
                    start: n[0],
                    end: n[1],
                    phoneme: n[2],
                    state: n[3],
                });
            }
            _ => return Err(err(format!("unrecognized record `{line}`"))),
        }
    }
    let align = StateAlignment {
        states_per_phoneme: states.ok_or(Error::Parse {
            line: 0,
            message: "missing states_per_phoneme header".into(),
        })?,
        frame_shift: shift.ok_or(Error::Parse {
            line: 0,
            message: "missing frame_shift header".into(),
        })?,
        entries,
    };
    align.validate()?;
    Ok(align)
}

/// Check the optional symbol column against the score's phonemes.
pub fn check_symbols(text: &str, score: &Score) -> Result<(), Error> {
    let phonemes = score.phoneme_sequence();
    for (i, raw) in text.lines().enumerate() {
        let fields: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
        if fields.len() != 5 {
            continue;
        }
        let p: usize = fields[2].parse().unwrap_or(usize::MAX);
        match phonemes.get(p) {
            Some((_, sym)) if *sym == fields[4] => {}
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("symbol `{}` does not match phoneme {p} of the score", fields[4]),
                })
            }
        }
    }
    Ok(())
}
