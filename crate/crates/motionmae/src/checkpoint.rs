//! `MMCK` checkpoints.
//!
//! Layout, little-endian: magic, version `u8`, 32-byte config digest, step
//! `u64`, record count `u32`, then records of (name length `u16`, name,
//! rank `u8`, dims `u32 × rank`, `f32` payload). Parameters come first in
//! state order, followed by `opt.m/<name>` and `opt.v/<name>` moments. A
//! SHA-256 of every preceding byte closes the file.

use std::path::Path;

use motionmae_core::model::{param_specs, ModelConfig, ModelState, StateKind};
use motionmae_core::numerics::{OptimState, Tensor};
use motionmae_core::training::TrainState;
use sha2::{Digest, Sha256};

use crate::bytes::Reader;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MMCK";
pub const VERSION: u8 = 1;
const M_PREFIX: &str = "opt.m/";
const V_PREFIX: &str = "opt.v/";

/// Canonical text of every field that determines parameter names and shapes.
pub fn canonical_config(cfg: &ModelConfig) -> String {
    let (g, e, d) = (cfg.grid, cfg.encoder, cfg.decoder);
    format!(
        "grid={},{},{};cube={},{};channels={};encoder={},{},{},{};decoder={},{},{},{},{};targets={};classes={}",
        g.t,
        g.h,
        g.w,
        g.cube.t,
        g.cube.p,
        g.channels,
        e.depth,
        e.embed_dim,
        e.heads,
        e.mlp_ratio,
        d.depth,
        d.embed_dim,
        d.heads,
        d.mlp_ratio,
        d.arch.name(),
        cfg.target_kind.name(),
        cfg.num_classes
    )
}

pub fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(canonical_config(cfg).as_bytes()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub state: TrainState<f32>,
}

impl Checkpoint {
    pub fn new(cfg: &ModelConfig, state: TrainState<f32>) -> Self {
        Checkpoint { digest: config_digest(cfg), state }
    }

    pub fn step(&self) -> u64 {
        self.state.opt.t
    }

    /// Errors with [`Error::DigestMismatch`] unless written for `cfg`, and
    /// with a shape error unless the tensors match `kind`'s layout.
    pub fn check(&self, cfg: &ModelConfig, kind: StateKind) -> Result<()> {
        if self.digest != config_digest(cfg) {
            return Err(Error::DigestMismatch);
        }
        let specs = param_specs(cfg, kind);
        let params = &self.state.params;
        let same = specs.len() == params.len()
            && specs.iter().zip(params.iter()).all(|(s, (n, t))| s.name == n && s.shape == t.shape());
        if !same {
            return Err(Error::config(format!("checkpoint tensors do not match the {kind:?} layout")));
        }
        Ok(())
    }
}

fn push_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let params = &ck.state.params;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&ck.digest);
    out.extend_from_slice(&ck.step().to_le_bytes());
    out.extend_from_slice(&(3 * params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        push_record(&mut out, name, t);
    }
    for (prefix, moments) in [(M_PREFIX, &ck.state.opt.m), (V_PREFIX, &ck.state.opt.v)] {
        for (name, t) in params.names().iter().zip(moments) {
            push_record(&mut out, &format!("{prefix}{name}"), t);
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

fn parse(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Malformed { what: "checkpoint", detail: "record name is not UTF-8".into() })?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Malformed {
            what: "checkpoint",
            detail: format!("{name}: shape overflow"),
        })?;
        let data = r.f32s(n)?;
        records.push((name, shape, data));
    }
    r.take(32)?;
    r.finish()?;

    let malformed = |detail: String| Error::Malformed { what: "checkpoint", detail };
    let mut params = Vec::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (name, shape, data) in records {
        let t = Tensor::new(shape, data).map_err(|e| malformed(format!("{name}: {e}")))?;
        if let Some(rest) = name.strip_prefix(M_PREFIX) {
            m.push((rest.to_string(), t));
        } else if let Some(rest) = name.strip_prefix(V_PREFIX) {
            v.push((rest.to_string(), t));
        } else {
            params.push((name, t));
        }
    }
    let order_ok = |moments: &[(String, Tensor<f32>)]| {
        moments.len() == params.len()
            && moments.iter().zip(&params).all(|(a, b)| a.0 == b.0 && a.1.shape() == b.1.shape())
    };
    if !order_ok(&m) || !order_ok(&v) {
        return Err(malformed("optimizer moments do not follow the parameter list".into()));
    }
    let params = ModelState::from_named(params)?;
    let opt = OptimState { m: m.into_iter().map(|x| x.1).collect(), v: v.into_iter().map(|x| x.1).collect(), t: step };
    Ok(Checkpoint { digest, state: TrainState { params, opt } })
}

/// Truncation is reported as such; any other damage that survives framing
/// shows up as a file digest mismatch.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let parsed = parse(bytes);
    if matches!(parsed, Err(Error::Truncated { .. } | Error::BadMagic { .. } | Error::UnsupportedVersion { .. })) {
        return parsed;
    }
    let Some(body) = bytes.len().checked_sub(32) else {
        return parsed;
    };
    if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
        return Err(Error::Corrupted);
    }
    parsed
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(ck)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
