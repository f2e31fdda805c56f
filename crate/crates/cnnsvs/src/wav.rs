//! 16-bit PCM mono RIFF/WAVE with the canonical 44-byte header.

use std::fs;
use std::path::Path;

use cnnsvs_core::vocoder::to_pcm16;

use crate::atomic::write_atomic;
use crate::features::Reader;
use crate::FormatError;

pub const WAV_HEADER_BYTES: usize = 44;

pub fn encode_wav(pcm: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (pcm.len() * 2) as u32;
    let mut out = Vec::with_capacity(WAV_HEADER_BYTES + pcm.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in pcm {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Decode a file written by [`encode_wav`]; returns the sample rate and samples.
pub fn decode_wav(bytes: &[u8]) -> Result<(u32, Vec<i16>), FormatError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != b"RIFF" {
        return Err(FormatError::BadMagic { expected: "RIFF" });
    }
    let _riff_len = r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(FormatError::BadMagic { expected: "WAVE" });
    }
    if r.take(4)? != b"fmt " || r.u32()? != 16 {
        return Err(FormatError::Invalid("expected a 16-byte fmt chunk".into()));
    }
    let (format, channels) = (r.u16()?, r.u16()?);
    let sample_rate = r.u32()?;
    let _byte_rate = r.u32()?;
    let (_align, bits) = (r.u16()?, r.u16()?);
    if format != 1 || channels != 1 || bits != 16 {
        return Err(FormatError::Invalid(format!(
            "only mono 16-bit PCM is supported (format {format}, {channels} channels, {bits} bits)"
        )));
    }
    if r.take(4)? != b"data" {
        return Err(FormatError::Invalid("missing data chunk".into()));
    }
    let len = r.u32()? as usize;
    let data = r.take(len)?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok((sample_rate, samples))
}

/// Quantize, peak-normalizing to -1 dBFS if the samples would clip, and write.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), FormatError> {
    let pcm = to_pcm16(samples)?;
    write_atomic(path, &encode_wav(&pcm, sample_rate))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(u32, Vec<i16>), FormatError> {
    decode_wav(&fs::read(path)?)
}
