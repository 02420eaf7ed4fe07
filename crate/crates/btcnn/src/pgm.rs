//! Binary PGM (P5) reading and writing.
//!
//! Dataset images are P5 with maxval 65535 (two bytes per sample, most
//! significant byte first); masks are P5 with maxval 255. The reader accepts
//! any valid P5 header, including `#` comments.

use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("malformed pgm: {0}")]
    Malformed(String),
    #[error("pgm io: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoded grayscale image. Samples are row-major, one per pixel, already
/// widened to u16 regardless of the file's sample width.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn malformed(msg: impl Into<String>) -> PgmError {
    PgmError::Malformed(msg.into())
}

// Reads one whitespace/comment-delimited ASCII token starting at *pos.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<u64, PgmError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(malformed("expected integer in header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed("bad integer in header"))
}

pub fn decode(bytes: &[u8]) -> Result<Pgm, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(malformed("missing P5 magic"));
    }
    let mut pos = 2;
    let width = next_token(bytes, &mut pos)? as usize;
    let height = next_token(bytes, &mut pos)? as usize;
    let maxval = next_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing raster separator"));
    }
    pos += 1;

    let n = width * height;
    let wide = maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() != need {
        return Err(malformed(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            need
        )));
    }
    let samples: Vec<u16> = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    if let Some(&bad) = samples.iter().find(|&&s| s as u64 > maxval) {
        return Err(malformed(format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read_file(path: &Path) -> Result<Pgm, PgmError> {
    decode(&fs::read(path)?)
}

pub fn encode_u16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    let mut out = Vec::with_capacity(20 + samples.len() * 2);
    write!(out, "P5\n{width} {height}\n65535\n").unwrap();
    for &s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn encode_u8(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    let mut out = Vec::with_capacity(20 + samples.len());
    write!(out, "P5\n{width} {height}\n255\n").unwrap();
    out.extend_from_slice(samples);
    out
}

pub fn write_u16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<(), PgmError> {
    Ok(fs::write(path, encode_u16(width, height, samples))?)
}

pub fn write_u8(path: &Path, width: usize, height: usize, samples: &[u8]) -> Result<(), PgmError> {
    Ok(fs::write(path, encode_u8(width, height, samples))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_hand_built_16bit() {
        // 4x4, maxval 65535, big-endian; sample (0,0) = 0x0102 = 258.
        let mut bytes = b"P5\n4 4\n65535\n".to_vec();
        let mut samples = vec![0u16; 16];
        samples[0] = 0x0102;
        for &s in &samples {
            bytes.extend_from_slice(&s.to_be_bytes());
        }
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (4, 4, 65535));
        assert_eq!(img.samples[0], 258);
        assert!(img.samples[1..].iter().all(|&s| s == 0));
    }

    #[test]
    fn decode_8bit_and_comments() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x07\xff".to_vec();
        let img = decode(&bytes).unwrap();
        assert_eq!(img.samples, vec![7, 255]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"P6\n1 1\n255\n\x00").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00\x00\x00").is_err());
        assert!(decode(b"P5\n2 2\n65535\n").is_err());
        assert!(decode(b"P5\n0 2\n255\n").is_err());
    }

    #[test]
    fn rejects_sample_above_maxval() {
        assert!(decode(b"P5\n1 1\n7\n\x08").is_err());
    }

    proptest! {
        #[test]
        fn u16_round_trip(w in 1usize..12, h in 1usize..12, seed in 0u64..1000) {
            let mut rng = crate::rng::Rng::new(seed);
            let samples: Vec<u16> = (0..w * h).map(|_| rng.next_u64() as u16).collect();
            let img = decode(&encode_u16(w, h, &samples)).unwrap();
            prop_assert_eq!(img.samples, samples);
            prop_assert_eq!((img.width, img.height), (w, h));
        }
    }
}
