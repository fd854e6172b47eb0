//! Clips, the moving-square generator, temporal clip sampling and the two
//! spatial augmentations (random resized crop, horizontal flip).
//!
//! Every augmentation picks its random parameters once per clip and applies
//! them to all frames.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use rand::Rng as _;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ClipDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ClipDims {
    pub fn new(t: usize, h: usize, w: usize, c: usize) -> Self {
        ClipDims { t, h, w, c }
    }

    pub fn numel(&self) -> usize {
        self.t * self.h * self.w * self.c
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }
}

/// `T×H×W×C` volume of values in `[0, 1]`, frame-major then row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    dims: ClipDims,
    data: Vec<f32>,
}

impl Clip {
    pub fn new(dims: ClipDims, data: Vec<f32>) -> Result<Self> {
        if dims.t == 0 || dims.h == 0 || dims.w == 0 || dims.c == 0 {
            return Err(Error::invalid("dims", "clip dimensions must be positive"));
        }
        if data.len() != dims.numel() {
            return Err(Error::shape("clip", format!("{dims:?} needs {} values, got {}", dims.numel(), data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("pixel", format!("{v} outside [0, 1]")));
        }
        Ok(Clip { dims, data })
    }

    pub fn filled(dims: ClipDims, value: f32) -> Result<Self> {
        Clip::new(dims, vec![value; dims.numel()])
    }

    pub fn dims(&self) -> ClipDims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, ch: usize) -> usize {
        ((t * self.dims.h + y) * self.dims.w + x) * self.dims.c + ch
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize, ch: usize) -> f32 {
        self.data[self.index(t, y, x, ch)]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Applies `f` to every value, clamping the result into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f32) -> f32) -> Clip {
        Clip { dims: self.dims, data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect() }
    }

    /// Mutable access for callers that keep values inside `[0, 1]`.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Motion direction class of a synthetic clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Right,
    Left,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Right, Direction::Left, Direction::Up, Direction::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Right => "right",
            Direction::Left => "left",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Unit velocity; rows grow downwards, so `Up` has negative `dy`.
    pub fn unit(self) -> (i32, i32) {
        match self {
            Direction::Right => (1, 0),
            Direction::Left => (-1, 0),
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
        }
    }

    pub fn from_velocity(dx: i32, dy: i32) -> Option<Self> {
        match (dx.signum(), dy.signum()) {
            (1, 0) => Some(Direction::Right),
            (-1, 0) => Some(Direction::Left),
            (0, -1) => Some(Direction::Up),
            (0, 1) => Some(Direction::Down),
            _ => None,
        }
    }
}

/// A square of constant intensity translating over a constant background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub object_size: usize,
    /// Pixels per frame, `(dx, dy)`.
    pub velocity: (i32, i32),
    pub background_level: f32,
    pub object_level: f32,
    pub label: Direction,
}

impl SyntheticSpec {
    pub fn validate(&self, dims: ClipDims) -> Result<()> {
        if self.object_size == 0 || self.object_size > dims.h || self.object_size > dims.w {
            return Err(Error::invalid(
                "object_size",
                format!("{} does not fit a {}x{} frame", self.object_size, dims.h, dims.w),
            ));
        }
        for (name, v) in [("background_level", self.background_level), ("object_level", self.object_level)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
            }
        }
        if self.object_level == self.background_level {
            return Err(Error::invalid("object_level", "must differ from background_level"));
        }
        let (dx, dy) = self.velocity;
        if (dx, dy) != (0, 0) && Direction::from_velocity(dx, dy) != Some(self.label) {
            return Err(Error::invalid("label", format!("{:?} inconsistent with velocity ({dx}, {dy})", self.label)));
        }
        Ok(())
    }

    /// Draws a random direction, speed in `1..=max_speed`, square size and
    /// contrasting intensity levels.
    pub fn random(dims: ClipDims, max_speed: i32, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let label = Direction::ALL[rng.random_range(0..4)];
        let speed = rng.random_range(1..=max_speed.max(1));
        let (ux, uy) = label.unit();
        let max_size = (dims.h.min(dims.w) / 3).max(1);
        let min_size = (max_size / 2).max(1);
        let object_size = rng.random_range(min_size..=max_size);
        let background_level = rng.random_range(0.0f32..0.4);
        let object_level = rng.random_range(0.6f32..=1.0);
        SyntheticSpec { object_size, velocity: (ux * speed, uy * speed), background_level, object_level, label }
    }
}

/// Renders the moving square with toroidal wrap-around. The starting
/// position is drawn from `seed`.
pub fn generate_moving_square(spec: &SyntheticSpec, dims: ClipDims, seed: u64) -> Result<(Clip, Direction)> {
    spec.validate(dims)?;
    if dims.t == 0 || dims.c == 0 {
        return Err(Error::invalid("dims", "clip dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let y0 = rng.random_range(0..dims.h) as i64;
    let x0 = rng.random_range(0..dims.w) as i64;
    let mut clip = Clip::filled(dims, spec.background_level)?;
    let (dx, dy) = (spec.velocity.0 as i64, spec.velocity.1 as i64);
    let (h, w) = (dims.h as i64, dims.w as i64);
    for t in 0..dims.t {
        let top = y0 + t as i64 * dy;
        let left = x0 + t as i64 * dx;
        for i in 0..spec.object_size as i64 {
            let y = (top + i).rem_euclid(h) as usize;
            for j in 0..spec.object_size as i64 {
                let x = (left + j).rem_euclid(w) as usize;
                for ch in 0..dims.c {
                    let k = clip.index(t, y, x, ch);
                    clip.data_mut()[k] = spec.object_level;
                }
            }
        }
    }
    Ok((clip, spec.label))
}

/// Frame indices `start, start + stride, …` of a `t`-frame clip.
pub fn temporal_indices(len: usize, t: usize, stride: usize, start: usize) -> Result<Vec<usize>> {
    if t == 0 || stride == 0 {
        return Err(Error::invalid("stride", "clip length and stride must be positive"));
    }
    let last = start + (t - 1) * stride;
    if last >= len {
        return Err(Error::invalid("start", format!("frame {last} requested from a {len}-frame video")));
    }
    Ok((0..t).map(|i| start + i * stride).collect())
}

pub fn sample_clip(video: &Clip, t: usize, stride: usize, start: usize) -> Result<Clip> {
    let idx = temporal_indices(video.dims.t, t, stride, start)?;
    let mut data = Vec::with_capacity(t * video.dims.frame_len());
    for &i in &idx {
        data.extend_from_slice(video.frame(i));
    }
    Clip::new(ClipDims { t, ..video.dims }, data)
}

/// Axis-aligned crop rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropWindow {
    pub fn area_fraction(&self, h: usize, w: usize) -> f64 {
        (self.height * self.width) as f64 / (h * w) as f64
    }
}

/// Draws a crop whose area fraction lies in `scale` and whose aspect ratio is
/// log-uniform in `[3/4, 4/3]`. Falls back to a deterministic full-height
/// crop when ten draws do not fit.
pub fn sample_crop_window(h: usize, w: usize, scale: (f64, f64), seed: u64) -> Result<CropWindow> {
    let (lo, hi) = scale;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid("scale_range", format!("[{lo}, {hi}] is not inside (0, 1]")));
    }
    let area = (h * w) as f64;
    let in_range = |ch: usize, cw: usize| {
        let f = (ch * cw) as f64 / area;
        f >= lo && f <= hi
    };
    let mut rng = rng_from_seed(seed);
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.random_range(lo..=hi);
        let aspect = Float::exp(rng.random_range(log_lo..=log_hi));
        let cw = Float::round(Float::sqrt(target * aspect)) as usize;
        let ch = Float::round(Float::sqrt(target / aspect)) as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h && in_range(ch, cw) {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return Ok(CropWindow { top, left, height: ch, width: cw });
        }
    }
    for ch in (1..=h).rev() {
        let cw = Float::ceil((lo * area) / ch as f64) as usize;
        if cw >= 1 && cw <= w && in_range(ch, cw) {
            return Ok(CropWindow { top: (h - ch) / 2, left: (w - cw) / 2, height: ch, width: cw });
        }
    }
    Err(Error::invalid("scale_range", format!("no crop of a {h}x{w} frame has area in [{lo}, {hi}]")))
}

/// Crops every frame to `win` and resizes bilinearly (half-pixel centers) to
/// `out_h × out_w`.
pub fn crop_resize(clip: &Clip, win: CropWindow, out_h: usize, out_w: usize) -> Result<Clip> {
    let d = clip.dims;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("out_dims", "output size must be positive"));
    }
    if win.height == 0 || win.width == 0 || win.top + win.height > d.h || win.left + win.width > d.w {
        return Err(Error::invalid("crop", format!("{win:?} outside a {}x{} frame", d.h, d.w)));
    }
    let axis = |out: usize, len: usize, off: usize| -> Vec<(usize, usize, f32)> {
        let s = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = Float::floor(src) as usize;
                let i1 = (i0 + 1).min(len - 1);
                (off + i0, off + i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, win.height, win.top);
    let xs = axis(out_w, win.width, win.left);
    let dims = ClipDims { h: out_h, w: out_w, ..d };
    let mut out = Vec::with_capacity(dims.numel());
    for t in 0..d.t {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for ch in 0..d.c {
                    let top = clip.get(t, y0, x0, ch) * (1.0 - fx) + clip.get(t, y0, x1, ch) * fx;
                    let bot = clip.get(t, y1, x0, ch) * (1.0 - fx) + clip.get(t, y1, x1, ch) * fx;
                    out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
                }
            }
        }
    }
    Clip::new(dims, out)
}

pub fn random_resized_crop(clip: &Clip, scale: (f64, f64), out_h: usize, out_w: usize, seed: u64) -> Result<Clip> {
    let win = sample_crop_window(clip.dims.h, clip.dims.w, scale, seed)?;
    crop_resize(clip, win, out_h, out_w)
}

/// Reverses the width axis of every frame.
pub fn hflip(clip: &Clip) -> Clip {
    let d = clip.dims;
    let mut out = clip.clone();
    for t in 0..d.t {
        for y in 0..d.h {
            for x in 0..d.w {
                for ch in 0..d.c {
                    let k = out.index(t, y, x, ch);
                    out.data[k] = clip.get(t, y, d.w - 1 - x, ch);
                }
            }
        }
    }
    out
}
