//! Bit-exact file formats: portable float maps (PFM) for depth, 16-bit
//! binary PGM for images, `FDCV` coefficient volumes, and `FDP1` parameter
//! checkpoints.
//!
//! All multi-byte integers in the custom formats are 32-bit little-endian;
//! floats are IEEE 754 little-endian.

use std::fs;
use std::path::Path;

use crate::autodiff::optim::ParamSet;
use crate::error::{Error, Result};
use crate::spectrum::{CoefficientVolume, DepthMap};

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

// ---------------------------------------------------------------------------
// PFM (grayscale "Pf" variant)
// ---------------------------------------------------------------------------

/// Encodes a map as a grayscale PFM: header `Pf\n{w} {h}\n-1.0\n`, then
/// rows bottom-up as little-endian f32 (the negative scale marker means
/// little-endian).
pub fn write_pfm_bytes(height: usize, width: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::ShapeMismatch { lhs: vec![values.len()], rhs: vec![height, width] });
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("PFM payload must be finite, got {bad}")));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&(values[y * width + x] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a grayscale PFM into `(height, width, row-major values)`.
/// Rejects the color `PF` variant and truncated payloads, reporting the
/// byte offset of the defect.
pub fn read_pfm_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut at = 0usize;
    let token = |at: &mut usize| -> Result<(usize, String)> {
        while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        let start = *at;
        while *at < bytes.len() && !bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if start == *at {
            return Err(format_err(start, "unexpected end of header"));
        }
        let text = std::str::from_utf8(&bytes[start..*at])
            .map_err(|_| format_err(start, "header is not ASCII"))?;
        Ok((start, text.to_string()))
    };
    let (magic_at, magic) = token(&mut at)?;
    if magic == "PF" {
        return Err(format_err(
            magic_at,
            "color PFM (magic \"PF\") is not supported; expected grayscale \"Pf\"",
        ));
    }
    if magic != "Pf" {
        return Err(format_err(magic_at, format!("bad magic {magic:?}, expected \"Pf\"")));
    }
    let (w_at, w_tok) = token(&mut at)?;
    let width: usize = w_tok.parse().map_err(|_| format_err(w_at, "bad width"))?;
    let (h_at, h_tok) = token(&mut at)?;
    let height: usize = h_tok.parse().map_err(|_| format_err(h_at, "bad height"))?;
    let (s_at, s_tok) = token(&mut at)?;
    let scale: f64 = s_tok.parse().map_err(|_| format_err(s_at, "bad scale"))?;
    if scale == 0.0 {
        return Err(format_err(s_at, "scale must be nonzero"));
    }
    let little_endian = scale < 0.0;
    // Exactly one whitespace byte separates header and payload.
    if at >= bytes.len() {
        return Err(format_err(at, "missing payload"));
    }
    at += 1;
    let need = height * width * 4;
    if bytes.len() < at + need {
        return Err(format_err(
            bytes.len(),
            format!("payload truncated: need {} bytes, have {}", at + need, bytes.len()),
        ));
    }
    let mut values = vec![0.0f64; height * width];
    let mut cursor = at;
    for y in (0..height).rev() {
        for x in 0..width {
            let raw: [u8; 4] = bytes[cursor..cursor + 4].try_into().unwrap();
            let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            values[y * width + x] = v as f64;
            cursor += 4;
        }
    }
    Ok((height, width, values))
}

pub fn write_pfm_file(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    let bytes = write_pfm_bytes(height, width, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a PFM as ground-truth depth: pixels that are finite and strictly
/// positive are valid, everything else is masked out.
pub fn read_pfm_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, values) = read_pfm_bytes(&bytes)?;
    let valid: Vec<bool> = values.iter().map(|&v| v.is_finite() && v > 0.0).collect();
    DepthMap::new(h, w, values, valid)
}

/// Reads a PFM as an estimate: dense mask, values taken as-is.
pub fn read_pfm_estimate(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, values) = read_pfm_bytes(&bytes)?;
    DepthMap::from_estimate(h, w, values)
}

// ---------------------------------------------------------------------------
// PGM (binary P5, 16-bit)
// ---------------------------------------------------------------------------

/// Encodes an image in `[0, 1]` as binary PGM with maxval 65535
/// (big-endian sample order, per the format). 1.0 maps to 65535.
pub fn write_pgm_bytes(height: usize, width: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::ShapeMismatch { lhs: vec![values.len()], rhs: vec![height, width] });
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in values {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

/// Decodes a 16-bit binary PGM back to `(height, width, values in [0,1])`.
pub fn read_pgm_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut at = 0usize;
    let token = |at: &mut usize| -> Result<(usize, String)> {
        while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        let start = *at;
        while *at < bytes.len() && !bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if start == *at {
            return Err(format_err(start, "unexpected end of header"));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*at]).into_owned()))
    };
    let (magic_at, magic) = token(&mut at)?;
    if magic != "P5" {
        return Err(format_err(magic_at, format!("bad magic {magic:?}, expected \"P5\"")));
    }
    let (w_at, w_tok) = token(&mut at)?;
    let width: usize = w_tok.parse().map_err(|_| format_err(w_at, "bad width"))?;
    let (h_at, h_tok) = token(&mut at)?;
    let height: usize = h_tok.parse().map_err(|_| format_err(h_at, "bad height"))?;
    let (m_at, m_tok) = token(&mut at)?;
    let maxval: usize = m_tok.parse().map_err(|_| format_err(m_at, "bad maxval"))?;
    if maxval != 65535 {
        return Err(format_err(m_at, format!("expected 16-bit maxval 65535, got {maxval}")));
    }
    at += 1;
    let need = height * width * 2;
    if bytes.len() < at + need {
        return Err(format_err(bytes.len(), "payload truncated"));
    }
    let values = (0..height * width)
        .map(|i| {
            let raw = [bytes[at + 2 * i], bytes[at + 2 * i + 1]];
            u16::from_be_bytes(raw) as f64 / 65535.0
        })
        .collect();
    Ok((height, width, values))
}

pub fn write_pgm_file(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    let bytes = write_pgm_bytes(height, width, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm_file(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pgm_bytes(&bytes)
}

// ---------------------------------------------------------------------------
// FDCV coefficient volumes
// ---------------------------------------------------------------------------

const VOLUME_MAGIC: &[u8; 4] = b"FDCV";

/// Serializes a coefficient volume: magic `FDCV`; `S`, map height, map
/// width as u32 LE; `S^2` validity bytes; coefficients channel-major as
/// f64 LE.
pub fn write_volume_bytes(vol: &CoefficientVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + vol.channels() + vol.data().len() * 8);
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&(vol.block() as u32).to_le_bytes());
    out.extend_from_slice(&(vol.map_height() as u32).to_le_bytes());
    out.extend_from_slice(&(vol.map_width() as u32).to_le_bytes());
    out.extend(vol.valid_freq().iter().map(|&b| b as u8));
    for &v in vol.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_volume_bytes(bytes: &[u8]) -> Result<CoefficientVolume> {
    if bytes.len() < 16 {
        return Err(format_err(bytes.len(), "too short for an FDCV header"));
    }
    if &bytes[..4] != VOLUME_MAGIC {
        return Err(format_err(0, "bad magic, expected \"FDCV\""));
    }
    let u32_at = |at: usize| -> u32 { u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) };
    let block = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    if block == 0 || height % block != 0 || width % block != 0 {
        return Err(format_err(
            4,
            format!("inconsistent geometry: S={block}, map {height}x{width}"),
        ));
    }
    let channels = block * block;
    let mut at = 16usize;
    if bytes.len() < at + channels {
        return Err(format_err(bytes.len(), "validity mask truncated"));
    }
    let valid: Vec<bool> = bytes[at..at + channels].iter().map(|&b| b != 0).collect();
    at += channels;
    let (py, px) = (height / block, width / block);
    let count = channels * py * px;
    if bytes.len() < at + count * 8 {
        return Err(format_err(
            bytes.len(),
            format!("coefficient payload truncated: need {} bytes", at + count * 8),
        ));
    }
    let data: Vec<f64> = (0..count)
        .map(|i| f64::from_le_bytes(bytes[at + 8 * i..at + 8 * i + 8].try_into().unwrap()))
        .collect();
    CoefficientVolume::from_parts(block, py, px, data, valid)
}

pub fn write_volume_file(path: &Path, vol: &CoefficientVolume) -> Result<()> {
    fs::write(path, write_volume_bytes(vol)).map_err(|e| Error::io(path, e))
}

pub fn read_volume_file(path: &Path) -> Result<CoefficientVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_volume_bytes(&bytes)
}

// ---------------------------------------------------------------------------
// FDP1 parameter checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"FDP1";

/// Serializes a parameter set: magic `FDP1`, then per parameter (in set
/// order) u32 LE name length, UTF-8 name, u32 LE rank, u32 LE extents, and
/// the raw f64 LE values.
pub fn write_checkpoint_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &e in &p.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<ParamSet> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_err(0, "bad magic, expected \"FDP1\""));
    }
    let mut at = 4usize;
    let mut params = ParamSet::new();
    let read_u32 = |at: &mut usize| -> Result<u32> {
        if bytes.len() < *at + 4 {
            return Err(format_err(bytes.len(), "truncated integer field"));
        }
        let v = u32::from_le_bytes(bytes[*at..*at + 4].try_into().unwrap());
        *at += 4;
        Ok(v)
    };
    while at < bytes.len() {
        let name_len = read_u32(&mut at)? as usize;
        if bytes.len() < at + name_len {
            return Err(format_err(bytes.len(), "truncated parameter name"));
        }
        let name = std::str::from_utf8(&bytes[at..at + name_len])
            .map_err(|_| format_err(at, "parameter name is not UTF-8"))?
            .to_string();
        at += name_len;
        let rank = read_u32(&mut at)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut at)? as usize);
        }
        let numel: usize = shape.iter().product();
        if bytes.len() < at + numel * 8 {
            return Err(format_err(bytes.len(), format!("parameter {name:?} data truncated")));
        }
        let data: Vec<f64> = (0..numel)
            .map(|i| f64::from_le_bytes(bytes[at + 8 * i..at + 8 * i + 8].try_into().unwrap()))
            .collect();
        at += numel * 8;
        params.push(&name, &shape, data)?;
    }
    Ok(params)
}

pub fn write_checkpoint_file(path: &Path, params: &ParamSet) -> Result<()> {
    fs::write(path, write_checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_file(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_bytes(&bytes)
}
