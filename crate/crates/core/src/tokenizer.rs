//! Cube tokenization, fixed sin-cos positional encodings and token masking.
//!
//! Tokens are ordered `(t', h', w')` row-major over the grid. Each token is
//! the flattened `ct × cp × cp × C` sub-volume in (frame, row, col, channel)
//! order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use rand::seq::index;

use crate::numerics::{Scalar, Tensor};
use crate::rng::rng_from_seed;
use crate::videodata::{Clip, ClipDims};
use crate::{Error, Result};

/// Cube extent: `t` frames by `p × p` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CubeDims {
    pub t: usize,
    pub p: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub cube: CubeDims,
    pub channels: usize,
}

impl TokenGrid {
    pub fn for_clip(dims: ClipDims, cube: CubeDims) -> Result<Self> {
        if cube.t == 0 || cube.p == 0 {
            return Err(Error::invalid("cube", "cube dimensions must be positive"));
        }
        if !dims.t.is_multiple_of(cube.t) || !dims.h.is_multiple_of(cube.p) || !dims.w.is_multiple_of(cube.p) {
            return Err(Error::shape(
                "patchify",
                format!("clip {}x{}x{} not divisible by cube {}x{}x{}", dims.t, dims.h, dims.w, cube.t, cube.p, cube.p),
            ));
        }
        Ok(TokenGrid { t: dims.t / cube.t, h: dims.h / cube.p, w: dims.w / cube.p, cube, channels: dims.c })
    }

    pub fn num_tokens(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn spatial_cells(&self) -> usize {
        self.h * self.w
    }

    /// Features per token, `ct·cp·cp·C`.
    pub fn token_dim(&self) -> usize {
        self.cube.t * self.cube.p * self.cube.p * self.channels
    }

    /// Features per motion target, `cp·cp·C`.
    pub fn motion_dim(&self) -> usize {
        self.cube.p * self.cube.p * self.channels
    }

    pub fn clip_dims(&self) -> ClipDims {
        ClipDims::new(self.t * self.cube.t, self.h * self.cube.p, self.w * self.cube.p, self.channels)
    }

    pub fn token_index(&self, tt: usize, hh: usize, ww: usize) -> usize {
        (tt * self.h + hh) * self.w + ww
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.h * self.w), (i / self.w) % self.h, i % self.w)
    }
}

/// Splits a clip into cube tokens, `[N, D]`.
pub fn patchify(clip: &Clip, cube: CubeDims) -> Result<(Tensor<f32>, TokenGrid)> {
    let grid = TokenGrid::for_clip(clip.dims(), cube)?;
    let (ct, cp, c) = (cube.t, cube.p, grid.channels);
    let mut out = Vec::with_capacity(grid.num_tokens() * grid.token_dim());
    for tt in 0..grid.t {
        for hh in 0..grid.h {
            for ww in 0..grid.w {
                for dt in 0..ct {
                    for dy in 0..cp {
                        let start = clip.index(tt * ct + dt, hh * cp + dy, ww * cp, 0);
                        out.extend_from_slice(&clip.data()[start..start + cp * c]);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![grid.num_tokens(), grid.token_dim()], out)?, grid))
}

fn check_tokens(tokens: &Tensor<f32>, rows: usize, cols: usize) -> Result<()> {
    if tokens.rank() != 2 || tokens.rows() != rows || tokens.cols() != cols {
        return Err(Error::shape("unpatchify", format!("{:?} for a grid of [{rows}, {cols}]", tokens.shape())));
    }
    Ok(())
}

/// Inverse of [`patchify`] without the `[0, 1]` range check; returns the
/// clip values in frame-major order.
pub fn unpatchify_values(tokens: &Tensor<f32>, grid: &TokenGrid) -> Result<Vec<f32>> {
    check_tokens(tokens, grid.num_tokens(), grid.token_dim())?;
    let dims = grid.clip_dims();
    let (ct, cp, c) = (grid.cube.t, grid.cube.p, grid.channels);
    let mut out = vec![0.0f32; dims.numel()];
    for i in 0..grid.num_tokens() {
        let (tt, hh, ww) = grid.coords(i);
        let row = tokens.row(i);
        let mut k = 0;
        for dt in 0..ct {
            for dy in 0..cp {
                let start = (((tt * ct + dt) * dims.h + hh * cp + dy) * dims.w + ww * cp) * c;
                out[start..start + cp * c].copy_from_slice(&row[k..k + cp * c]);
                k += cp * c;
            }
        }
    }
    Ok(out)
}

pub fn unpatchify(tokens: &Tensor<f32>, grid: &TokenGrid) -> Result<Clip> {
    Clip::new(grid.clip_dims(), unpatchify_values(tokens, grid)?)
}

/// Places `[N, cp·cp·C]` motion tokens into a `T' × H × W × C` map, one
/// frame per temporal slot.
pub fn unpatchify_motion(tokens: &Tensor<f32>, grid: &TokenGrid) -> Result<Vec<f32>> {
    check_tokens(tokens, grid.num_tokens(), grid.motion_dim())?;
    let dims = grid.clip_dims();
    let (cp, c) = (grid.cube.p, grid.channels);
    let mut out = vec![0.0f32; grid.t * dims.frame_len()];
    for i in 0..grid.num_tokens() {
        let (tt, hh, ww) = grid.coords(i);
        let row = tokens.row(i);
        for dy in 0..cp {
            let start = ((tt * dims.h + hh * cp + dy) * dims.w + ww * cp) * c;
            out[start..start + cp * c].copy_from_slice(&row[dy * cp * c..(dy + 1) * cp * c]);
        }
    }
    Ok(out)
}

/// Fixed 3-axis sin-cos positional encoding, `[N, embed_dim]`.
///
/// Each axis gets `2·floor(E/6)` features as interleaved `(sin, cos)` pairs
/// with frequencies `10000^(-k/pairs)`; the `E mod 6` leftover features are
/// zero.
pub fn sincos_posenc<T: Scalar>(grid: &TokenGrid, embed_dim: usize) -> Result<Tensor<T>> {
    if embed_dim < 6 {
        return Err(Error::invalid("embed_dim", format!("{embed_dim} < 6")));
    }
    let pairs = embed_dim / 6;
    let per_axis = 2 * pairs;
    let freqs: Vec<f64> = (0..pairs).map(|k| Float::powf(10000f64, -(k as f64) / pairs as f64)).collect();
    let n = grid.num_tokens();
    let mut out = vec![T::zero(); n * embed_dim];
    for i in 0..n {
        let (tt, hh, ww) = grid.coords(i);
        let row = &mut out[i * embed_dim..(i + 1) * embed_dim];
        for (a, pos) in [tt, hh, ww].into_iter().enumerate() {
            for (k, &f) in freqs.iter().enumerate() {
                let angle = pos as f64 * f;
                row[a * per_axis + 2 * k] = T::from_f64(Float::sin(angle));
                row[a * per_axis + 2 * k + 1] = T::from_f64(Float::cos(angle));
            }
        }
    }
    Tensor::new(vec![n, embed_dim], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskStrategy {
    /// Uniform over all tokens.
    Random,
    /// Uniform over spatial cells; a masked cell is masked at every time slot.
    Tube,
    /// Uniform over temporal slots; a masked slot is masked at every cell.
    TimeOnly,
}

impl MaskStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MaskStrategy::Random => "random",
            MaskStrategy::Tube => "tube",
            MaskStrategy::TimeOnly => "time_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [MaskStrategy::Random, MaskStrategy::Tube, MaskStrategy::TimeOnly].into_iter().find(|m| m.name() == s)
    }
}

/// Per-token visibility decision; `true` means masked.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub bits: Vec<bool>,
    pub ratio: f64,
    pub strategy: MaskStrategy,
    pub seed: u64,
}

impl Mask {
    /// All tokens visible.
    pub fn none(n: usize) -> Self {
        Mask { bits: vec![false; n], ratio: 0.0, strategy: MaskStrategy::Random, seed: 0 }
    }

    /// Mask from explicit bits; the ratio records the masked fraction.
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let ratio = bits.iter().filter(|&&b| b).count() as f64 / bits.len().max(1) as f64;
        Mask { bits, ratio, strategy: MaskStrategy::Random, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| !self.bits[i]).collect()
    }
}

/// Number of masked units out of `units` at `ratio`, rounded down.
fn masked_units(ratio: f64, units: usize) -> usize {
    Float::floor(ratio * units as f64) as usize
}

/// Samples a mask over `grid`.
///
/// `Random` masks exactly `floor(ratio·N)` tokens. `Tube` masks
/// `floor(ratio·H'W')` spatial cells across all slots and `TimeOnly` masks
/// `floor(ratio·T')` whole slots, so structured masks always leave at least
/// one cell or slot visible.
pub fn sample_mask(grid: &TokenGrid, ratio: f64, strategy: MaskStrategy, seed: u64) -> Result<Mask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid("ratio", format!("{ratio} outside [0, 1)")));
    }
    let n = grid.num_tokens();
    let cells = grid.spatial_cells();
    let mut rng = rng_from_seed(seed);
    let mut bits = vec![false; n];
    match strategy {
        MaskStrategy::Random => {
            for i in index::sample(&mut rng, n, masked_units(ratio, n)) {
                bits[i] = true;
            }
        }
        MaskStrategy::Tube => {
            for cell in index::sample(&mut rng, cells, masked_units(ratio, cells)) {
                for tt in 0..grid.t {
                    bits[tt * cells + cell] = true;
                }
            }
        }
        MaskStrategy::TimeOnly => {
            for slot in index::sample(&mut rng, grid.t, masked_units(ratio, grid.t)) {
                bits[slot * cells..(slot + 1) * cells].iter_mut().for_each(|b| *b = true);
            }
        }
    }
    Ok(Mask { bits, ratio, strategy, seed })
}

/// Visible tokens in grid order with the visible and masked index lists.
pub fn split_visible(tokens: &Tensor<f32>, mask: &Mask) -> Result<(Tensor<f32>, Vec<usize>, Vec<usize>)> {
    if tokens.rank() != 2 || tokens.rows() != mask.len() {
        return Err(Error::shape("split_visible", format!("{:?} tokens for a mask of {}", tokens.shape(), mask.len())));
    }
    let visible = mask.visible_indices();
    if visible.is_empty() {
        return Err(Error::NoVisibleTokens);
    }
    Ok((tokens.gather_rows(&visible)?, visible, mask.masked_indices()))
}
