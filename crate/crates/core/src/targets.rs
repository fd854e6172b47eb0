//! Reconstruction targets for masked tokens.
//!
//! The space target of a masked token is its raw patch. The time target is a
//! patch of the difference video `D[t] = |f[min(t+g, T-1)] - f[t]|`, taken at
//! the first frame of the token's cube, so each token gets one `cp×cp×C`
//! difference map. Frames past the end clamp to the last frame and give
//! zero rows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;


use crate::numerics::Tensor;
use crate::tokenizer::{patchify, Mask, TokenGrid};
use crate::videodata::Clip;
use crate::{Error, Result};

/// Which decoder heads are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetKind {
    Frame,
    Motion,
    Both,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Frame => "frame",
            TargetKind::Motion => "motion",
            TargetKind::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frame" => Some(TargetKind::Frame),
            "motion" => Some(TargetKind::Motion),
            "both" | "frame+motion" => Some(TargetKind::Both),
            _ => None,
        }
    }

    pub fn has_space(self) -> bool {
        matches!(self, TargetKind::Frame | TargetKind::Both)
    }

    pub fn has_time(self) -> bool {
        matches!(self, TargetKind::Motion | TargetKind::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub gap: usize,
    /// Standardize each space-target row by its own mean and std.
    pub normalize: bool,
    /// Keep the sign of the temporal difference instead of its magnitude.
    pub signed_motion: bool,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { kind: TargetKind::Both, gap: 1, normalize: false, signed_motion: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetBundle {
    /// `[M, ct·cp·cp·C]` in masked-index order.
    pub space: Option<Tensor<f32>>,
    /// `[M, cp·cp·C]` in masked-index order.
    pub time: Option<Tensor<f32>>,
    /// Per-row `(mean, std)` when space targets are normalized.
    pub norm_stats: Option<Vec<(f32, f32)>>,
    pub gap: usize,
}

fn check_mask(mask: &Mask, grid: &TokenGrid) -> Result<Vec<usize>> {
    if mask.len() != grid.num_tokens() {
        return Err(Error::shape("targets", format!("mask of {} for {} tokens", mask.len(), grid.num_tokens())));
    }
    let masked = mask.masked_indices();
    if masked.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(masked)
}

fn check_clip(clip: &Clip, grid: &TokenGrid) -> Result<()> {
    if clip.dims() != grid.clip_dims() {
        return Err(Error::shape("targets", format!("clip {:?} vs grid {:?}", clip.dims(), grid.clip_dims())));
    }
    Ok(())
}

pub fn make_space_target(
    clip: &Clip,
    mask: &Mask,
    grid: &TokenGrid,
    normalize_per_patch: bool,
) -> Result<(Tensor<f32>, Option<Vec<(f32, f32)>>)> {
    check_clip(clip, grid)?;
    let masked = check_mask(mask, grid)?;
    let (tokens, _) = patchify(clip, grid.cube)?;
    let mut rows = tokens.gather_rows(&masked)?;
    if !normalize_per_patch {
        return Ok((rows, None));
    }
    let d = rows.cols();
    let mut stats = Vec::with_capacity(masked.len());
    for row in rows.data_mut().chunks_mut(d) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / d as f64;
        let std = Float::sqrt(var).max(1e-6);
        for v in row.iter_mut() {
            *v = ((*v as f64 - mean) / std) as f32;
        }
        stats.push((mean as f32, std as f32));
    }
    Ok((rows, Some(stats)))
}

pub fn make_motion_target(clip: &Clip, mask: &Mask, grid: &TokenGrid, gap: usize) -> Result<Tensor<f32>> {
    motion_target(clip, mask, grid, gap, false)
}

fn motion_target(clip: &Clip, mask: &Mask, grid: &TokenGrid, gap: usize, signed: bool) -> Result<Tensor<f32>> {
    check_clip(clip, grid)?;
    let dims = clip.dims();
    if gap == 0 || gap >= dims.t {
        return Err(Error::invalid("gap", format!("{gap} outside [1, {})", dims.t)));
    }
    let masked = check_mask(mask, grid)?;
    let (cp, c) = (grid.cube.p, grid.channels);
    let dm = grid.motion_dim();
    let mut out = Vec::with_capacity(masked.len() * dm);
    for &i in &masked {
        let (tt, hh, ww) = grid.coords(i);
        let t0 = tt * grid.cube.t;
        let t1 = (t0 + gap).min(dims.t - 1);
        for dy in 0..cp {
            for dx in 0..cp {
                for ch in 0..c {
                    let (y, x) = (hh * cp + dy, ww * cp + dx);
                    let d = clip.get(t1, y, x, ch) - clip.get(t0, y, x, ch);
                    out.push(if signed { d } else { d.abs() });
                }
            }
        }
    }
    Tensor::new(vec![masked.len(), dm], out)
}

/// Builds the components requested by `cfg.kind`; the others are `None`.
pub fn make_targets(clip: &Clip, mask: &Mask, grid: &TokenGrid, cfg: &TargetConfig) -> Result<TargetBundle> {
    let (space, norm_stats) = if cfg.kind.has_space() {
        let (s, st) = make_space_target(clip, mask, grid, cfg.normalize)?;
        (Some(s), st)
    } else {
        (None, None)
    };
    let time = if cfg.kind.has_time() {
        Some(motion_target(clip, mask, grid, cfg.gap, cfg.signed_motion)?)
    } else {
        None
    };
    Ok(TargetBundle { space, time, norm_stats, gap: cfg.gap })
}
