//! Length-prefixed "JSON header + raw little-endian f32 payload" files.
//!
//! Layout: `u64` LE header length `n`, then `n` bytes of UTF-8 JSON, then
//! the payload as consecutive little-endian IEEE-754 `f32` values. Episode
//! sets, parameter checkpoints and tracking records all use this layout.
//! Binary PGM (P5) helpers for single frames live here as well.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn encode<H: Serialize>(header: &H, payload: &[f32]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write<H: Serialize>(path: &Path, header: &H, payload: &[f32]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for v in payload {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

pub fn decode<H: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<(H, Vec<f32>)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(bad("truncated header"));
    }
    let header: H = serde_json::from_slice(&body[..n])?;
    let raw = &body[n..];
    if raw.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let payload = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

/// Writes an 8-bit binary PGM. Pixel values are clamped to `[0, 1]` and
/// quantized as `round(255 * v)`.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Length(format!(
            "pgm {}x{} needs {} pixels, got {}",
            width,
            height,
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| quantize(v)));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn quantize(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Reads an 8-bit binary PGM back into `[0, 1]` floats.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // Header is four whitespace-separated tokens: magic, width, height, maxval.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM dimension"));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated PGM data"))?;
    Ok((w, h, data.iter().map(|&b| f32::from(b) / 255.0).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Head {
        name: String,
        n: usize,
    }

    proptest! {
        #[test]
        fn container_round_trip_is_bit_exact(payload in proptest::collection::vec(any::<f32>(), 0..64)) {
            let head = Head { name: "x".into(), n: payload.len() };
            let bytes = encode(&head, &payload).unwrap();
            let (h2, p2): (Head, Vec<f32>) = decode(Path::new("mem"), &bytes).unwrap();
            prop_assert_eq!(h2, head);
            let a: Vec<u32> = payload.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = p2.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_files_are_rejected() {
        let bytes = encode(&Head { name: "a".into(), n: 1 }, &[1.0]).unwrap();
        assert!(decode::<Head>(Path::new("mem"), &bytes[..5]).is_err());
        assert!(decode::<Head>(Path::new("mem"), &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let pixels: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        write_pgm(&path, 4, 3, &pixels).unwrap();
        let (w, h, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        for (a, b) in pixels.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }
}
