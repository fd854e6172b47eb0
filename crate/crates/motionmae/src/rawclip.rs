//! `MMAE` raw clip files: magic, version byte, `T, H, W, C` as `u32` LE,
//! then `f32` LE samples in frame-major, row-major order.

use std::path::Path;

use motionmae_core::videodata::{Clip, ClipDims};

use crate::bytes::Reader;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MMAE";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 16;

pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let d = clip.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d.numel());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    for v in [d.t, d.h, d.w, d.c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in clip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_clip(bytes: &[u8]) -> Result<Clip> {
    let mut r = Reader::new(bytes, "clip");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dims = ClipDims::new(dims[0], dims[1], dims[2], dims[3]);
    let n = dims.numel();
    if n == 0 {
        return Err(Error::Malformed { what: "clip", detail: format!("zero dimension in {dims:?}") });
    }
    let data = r.f32s(n)?;
    r.finish()?;
    Ok(Clip::new(dims, data)?)
}

pub fn save_clip(clip: &Clip, path: &Path) -> Result<()> {
    std::fs::write(path, encode_clip(clip)).map_err(|e| Error::io(path, e))
}

pub fn load_clip(path: &Path) -> Result<Clip> {
    decode_clip(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
