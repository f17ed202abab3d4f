use std::fs;
use std::path::Path;

use crate::error::{Result, StereoError};

/// Float image with rows stored top row first and channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(StereoError::pre(format!("PFM images have 1 or 3 channels, not {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(StereoError::pre(format!(
                "PFM data has {} samples, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

/// Header tokens are separated by whitespace; the single whitespace byte
/// after the scale ends the header.
fn header_tokens(bytes: &[u8]) -> Option<(Vec<&str>, usize)> {
    let mut tokens = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i || i >= bytes.len() {
            return None;
        }
        tokens.push(std::str::from_utf8(&bytes[start..i]).ok()?);
    }
    Some((tokens, i + 1))
}

/// Parses PFM bytes. `origin` names the source in error messages.
pub fn decode_pfm(bytes: &[u8], origin: &Path) -> Result<PfmImage> {
    let bad = |msg: String| StereoError::format(origin, msg);
    let (tokens, offset) = header_tokens(bytes).ok_or_else(|| bad("incomplete PFM header".into()))?;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(format!("unknown PFM magic {other:?}"))),
    };
    let dim = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| bad(format!("invalid {what} {s:?}")))
    };
    let width = dim(tokens[1], "width")?;
    let height = dim(tokens[2], "height")?;
    let scale: f32 = tokens[3]
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| bad(format!("invalid scale {:?}", tokens[3])))?;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("image dimensions overflow".into()))?;
    let payload = &bytes[offset..];
    if payload.len() < n * 4 {
        return Err(bad(format!(
            "truncated payload: {} bytes, expected {}",
            payload.len(),
            n * 4
        )));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0f32; n];
    for (k, chunk) in payload[..n * 4].chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4-byte chunk");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        // Stored bottom row first.
        let (r, c) = (k / row, k % row);
        data[(height - 1 - r) * row + c] = v;
    }
    PfmImage::new(width, height, channels, data)
}

/// Little-endian PFM bytes.
pub fn encode_pfm(img: &PfmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    out.reserve(img.data.len() * 4);
    for r in (0..img.height).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StereoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pfm(&bytes, path)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &PfmImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(img)).map_err(|source| StereoError::Io {
        path: path.to_path_buf(),
        source,
    })
}
