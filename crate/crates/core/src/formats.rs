//! On-disk formats: the binary embedding-matrix file and binary Netpbm
//! images (P6 color, P5 masks).
//!
//! Embedding-matrix layout, little-endian, no padding:
//!
//! ```text
//! offset 0   "VAPE"
//! offset 4   version byte, always 1
//! offset 5   u32 rows
//! offset 9   u32 cols
//! offset 13  rows * cols f32 values, row-major
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::embedalign::{AlignError, EmbeddingMatrix};
use crate::scene::{Mask, RasterImage};

pub const MATRIX_MAGIC: &[u8; 4] = b"VAPE";
pub const MATRIX_VERSION: u8 = 1;
const MATRIX_HEADER: usize = 13;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0")]
    BadMagic,
    #[error("unsupported version {version} at byte 4")]
    BadVersion { version: u8 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("invalid matrix: {0}")]
    Matrix(#[from] AlignError),
    #[error("bad header at byte {offset}: {reason}")]
    Header { offset: usize, reason: String },
    #[error("mask pixel value {value} at byte {offset} (only 0 and 255 allowed)")]
    MaskValue { offset: usize, value: u8 },
}

pub fn encode_embedding_matrix(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(MATRIX_HEADER + m.values().len() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(MATRIX_VERSION);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_embedding_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix, FormatError> {
    if bytes.len() < MATRIX_HEADER {
        if bytes.len() >= 4 && &bytes[..4] != MATRIX_MAGIC {
            return Err(FormatError::BadMagic);
        }
        return Err(FormatError::Truncated {
            expected: MATRIX_HEADER,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes[4] != MATRIX_VERSION {
        return Err(FormatError::BadVersion { version: bytes[4] });
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(MATRIX_HEADER))
        .ok_or(FormatError::Header {
            offset: 5,
            reason: "dimensions overflow".into(),
        })?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            offset: expected,
            extra: bytes.len() - expected,
        });
    }
    let values = bytes[MATRIX_HEADER..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(EmbeddingMatrix::new(rows, cols, values)?)
}

pub fn load_embedding_matrix(path: &Path) -> Result<EmbeddingMatrix, FormatError> {
    decode_embedding_matrix(&fs::read(path)?)
}

pub fn save_embedding_matrix(path: &Path, m: &EmbeddingMatrix) -> Result<(), FormatError> {
    fs::write(path, encode_embedding_matrix(m))?;
    Ok(())
}

/// Parsed Netpbm header: magic, width, height, and offset of pixel data.
struct PnmHeader {
    magic: [u8; 2],
    width: u32,
    height: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<PnmHeader, FormatError> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'5' || bytes[1] == b'6') {
        return Err(FormatError::Header {
            offset: 0,
            reason: "expected P5 or P6".into(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // Whitespace and comments between header fields.
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Header {
                offset: start,
                reason: "expected a decimal number".into(),
            });
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| FormatError::Header {
            offset: start,
            reason: format!("number {text} out of range"),
        })?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::Header {
            offset: pos,
            reason: "missing whitespace after maxval".into(),
        });
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(FormatError::Header {
            offset: pos,
            reason: format!("maxval {maxval} unsupported, need 255"),
        });
    }
    if width == 0 || height == 0 {
        return Err(FormatError::Header {
            offset: 2,
            reason: "zero dimension".into(),
        });
    }
    Ok(PnmHeader {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        data_offset: pos + 1,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &PnmHeader, channels: usize) -> Result<&'a [u8], FormatError> {
    let expected = h.data_offset + h.width as usize * h.height as usize * channels;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[h.data_offset..expected])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RasterImage, FormatError> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(FormatError::Header {
            offset: 0,
            reason: "expected P6 color image".into(),
        });
    }
    let data = raster(bytes, &h, 3)?;
    RasterImage::from_raw(h.width, h.height, data.to_vec()).map_err(|e| FormatError::Header {
        offset: 0,
        reason: e.to_string(),
    })
}

pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.raw());
    out
}

/// P5 mask: 0 is clear, 255 is set, anything else is rejected.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<Mask, FormatError> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(FormatError::Header {
            offset: 0,
            reason: "expected P5 mask".into(),
        });
    }
    let data = raster(bytes, &h, 1)?;
    let mut bits = Vec::with_capacity(data.len());
    for (i, &v) in data.iter().enumerate() {
        match v {
            0 => bits.push(false),
            255 => bits.push(true),
            value => {
                return Err(FormatError::MaskValue {
                    offset: h.data_offset + i,
                    value,
                })
            }
        }
    }
    Ok(Mask::from_bits(h.width, h.height, bits).expect("size checked"))
}

pub fn encode_pgm_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn load_image(path: &Path) -> Result<RasterImage, FormatError> {
    decode_ppm(&fs::read(path)?)
}

pub fn save_image(path: &Path, image: &RasterImage) -> Result<(), FormatError> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<Mask, FormatError> {
    decode_pgm_mask(&fs::read(path)?)
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<(), FormatError> {
    fs::write(path, encode_pgm_mask(mask))?;
    Ok(())
}
