//! Binary acoustic feature files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     b"SVSF"
//! version   u32 (= 1)
//! frames    u64
//! channels  u32
//! shift     f64   frame shift in seconds
//! rate      u32   sample rate the features were prepared for
//! names     channels x (u16 byte length, UTF-8 bytes)
//! body      frames x channels x f32, frame-major
//! ```

use std::fs;
use std::path::Path;

use cnnsvs_core::matrix::Matrix;

use crate::atomic::write_atomic;
use crate::FormatError;

pub const FEATURE_MAGIC: &[u8; 4] = b"SVSF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub names: Vec<String>,
    pub frame_shift: f64,
    pub sample_rate: u32,
    pub frames: usize,
    /// Frame-major values, `frames * names.len()` long.
    pub values: Vec<f32>,
}

impl FeatureFile {
    pub fn from_matrix(names: Vec<String>, m: &Matrix, frame_shift: f64, sample_rate: u32) -> Result<Self, FormatError> {
        if names.len() != m.cols() {
            return Err(FormatError::Invalid(format!(
                "{} channel names for {} columns",
                names.len(),
                m.cols()
            )));
        }
        Ok(Self {
            names,
            frame_shift,
            sample_rate,
            frames: m.rows(),
            values: m.as_slice().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.values.iter().map(|&v| v as f64).collect();
        Matrix::from_vec(self.frames, self.channels(), data).expect("body length checked on construction")
    }

    pub fn channel_index(&self, name: &str) -> Result<usize, FormatError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FormatError::Invalid(format!("no channel named `{name}` (have {})", self.names.join(", "))))
    }

    pub fn channel(&self, name: &str) -> Result<Vec<f32>, FormatError> {
        let c = self.channel_index(name)?;
        Ok(self.values.iter().skip(c).step_by(self.channels()).copied().collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.values.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u64).to_le_bytes());
        out.extend_from_slice(&(self.channels() as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_shift.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        for n in &self.names {
            out.extend_from_slice(&(n.len() as u16).to_le_bytes());
            out.extend_from_slice(n.as_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != FEATURE_MAGIC {
            return Err(FormatError::BadMagic { expected: "SVSF" });
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let frames = r.u64()? as usize;
        let channels = r.u32()? as usize;
        let frame_shift = r.f64()?;
        let sample_rate = r.u32()?;
        let mut names = Vec::with_capacity(channels);
        for _ in 0..channels {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            names.push(
                String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Invalid("channel name is not UTF-8".into()))?,
            );
        }
        let body = frames
            .checked_mul(channels)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| FormatError::Invalid("frame count overflows".into()))?;
        let rest = r.rest();
        if rest.len() < body {
            return Err(FormatError::Truncated {
                expected: body,
                found: rest.len(),
            });
        }
        if rest.len() > body {
            return Err(FormatError::Invalid(format!("{} trailing bytes after the body", rest.len() - body)));
        }
        let values = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            names,
            frame_shift,
            sample_rate,
            frames,
            values,
        })
    }
}

pub fn write_features(path: &Path, file: &FeatureFile) -> Result<(), FormatError> {
    write_atomic(path, &file.to_bytes())?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureFile, FormatError> {
    FeatureFile::from_bytes(&fs::read(path)?)
}

/// Little-endian cursor that reports truncation.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                expected: n,
                found: available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
