//! Binary PPM (`P6`, maxval 255) images.

use std::path::Path;

use motionmae_core::evalviz::Image;

use crate::{Error, Result};

/// The single 8-bit quantization applied to `[0, 1]` values.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

/// Parsed `P6` image: width, height and row-major RGB bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Ppm {
    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let k = (y * self.width + x) * 3;
        [self.rgb[k], self.rgb[k + 1], self.rgb[k + 2]]
    }
}

/// Parses header tokens separated by whitespace (no comments), then exactly
/// `3·W·H` bytes.
pub fn decode_ppm(bytes: &[u8]) -> Result<Ppm> {
    let malformed = |detail: &str| Error::Malformed { what: "ppm", detail: detail.to_string() };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::BadMagic { expected: *b"P6  ", found: bytes[..bytes.len().min(2)].to_vec() });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad header field"))?;
    }
    if fields[2] != 255 {
        return Err(malformed("maxval must be 255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing separator after maxval"));
    }
    pos += 1;
    let (width, height) = (fields[0], fields[1]);
    let need = width * height * 3;
    let have = bytes.len() - pos;
    if have < need {
        return Err(Error::Truncated { what: "ppm", needed: pos + need, have: bytes.len() });
    }
    if have > need {
        return Err(malformed("trailing bytes"));
    }
    Ok(Ppm { width, height, rgb: bytes[pos..].to_vec() })
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Ppm> {
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
