//! File formats, corpus storage, evaluation and the command-line driver
//! around [`cnnsvs_core`].

pub mod align;
pub mod atomic;
pub mod checkpoint;
pub mod cli;
pub mod corpus_io;
pub mod eval;
pub mod features;
pub mod synth;
pub mod wav;

pub use cnnsvs_core as core;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic, expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated: needed {expected} more bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] cnnsvs_core::Error),
}
