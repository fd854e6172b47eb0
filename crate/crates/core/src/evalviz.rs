//! Reconstruction grids, multi-view inference and accuracy metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{classify_values, ModelConfig, ModelState};
use crate::numerics::{Scalar, Tensor};
use crate::tokenizer::{unpatchify_motion, unpatchify_values, Mask, TokenGrid};
use crate::videodata::{crop_resize, sample_clip, Clip, CropWindow};
use crate::{Error, Result};

/// Fill value of masked patches in the masked-input row.
pub const MASK_GRAY: f32 = 0.5;
/// Gain applied to motion magnitudes before clamping for display.
pub const MOTION_GAIN: f32 = 3.0;

/// RGB image in `[0, 1]`, row-major, three values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image { height, width, pixels: vec![0.0; height * width * 3] }
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let k = (y * self.width + x) * 3;
        [self.pixels[k], self.pixels[k + 1], self.pixels[k + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let k = (y * self.width + x) * 3;
        self.pixels[k..k + 3].copy_from_slice(&rgb);
    }
}

/// Four rows of frames: original, masked input, reconstruction, motion.
/// Each row is `H` pixels tall and holds `T` frames side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconGrid {
    pub image: Image,
    pub frame_h: usize,
    pub frame_w: usize,
    pub frames: usize,
}

impl ReconGrid {
    pub const ROWS: usize = 4;

    /// Pixel of frame `t` at `(y, x)` in grid row `row`.
    pub fn pixel(&self, row: usize, t: usize, y: usize, x: usize) -> [f32; 3] {
        self.image.get(row * self.frame_h + y, t * self.frame_w + x)
    }
}

fn to_rgb(v: &[f32]) -> [f32; 3] {
    match v.len() {
        3 => [v[0], v[1], v[2]],
        1 => [v[0]; 3],
        n => {
            let g = v.iter().sum::<f32>() / n as f32;
            [g; 3]
        }
    }
}

/// Lays out the reconstruction grid of one clip.
///
/// Visible pixels of the reconstruction row are copied from `clip`; masked
/// ones come from `pred_space` (undoing per-patch normalization when `norm_stats`
/// is given in masked-index order) and are clamped to `[0, 1]`. The motion
/// row shows the channel mean of the time-head output times [`MOTION_GAIN`],
/// clamped; frame `t` shows temporal slot `t / ct`. Absent heads leave their
/// masked pixels gray and the motion row black.
pub fn build_recon_grid(
    clip: &Clip,
    mask: &Mask,
    grid: &TokenGrid,
    pred_space: Option<&Tensor<f32>>,
    pred_time: Option<&Tensor<f32>>,
    norm_stats: Option<&[(f32, f32)]>,
) -> Result<ReconGrid> {
    let d = clip.dims();
    if d != grid.clip_dims() || mask.len() != grid.num_tokens() {
        return Err(Error::shape("build_recon_grid", format!("clip {d:?}, mask {} vs grid {grid:?}", mask.len())));
    }
    let recon = match pred_space {
        Some(p) => {
            let mut p = p.clone();
            if let Some(stats) = norm_stats {
                let masked = mask.masked_indices();
                if stats.len() != masked.len() {
                    return Err(Error::shape("build_recon_grid", format!("{} stats for {} masked", stats.len(), masked.len())));
                }
                let cols = grid.token_dim();
                for (&i, &(mean, std)) in masked.iter().zip(stats) {
                    p.data_mut()[i * cols..(i + 1) * cols].iter_mut().for_each(|v| *v = *v * std + mean);
                }
            }
            Some(unpatchify_values(&p, grid)?)
        }
        None => None,
    };
    let motion = pred_time.map(|p| unpatchify_motion(p, grid)).transpose()?;

    let (cp, ct, c) = (grid.cube.p, grid.cube.t, d.c);
    let mut image = Image::new(ReconGrid::ROWS * d.h, d.t * d.w);
    for t in 0..d.t {
        for y in 0..d.h {
            for x in 0..d.w {
                let tok = grid.token_index(t / ct, y / cp, x / cp);
                let masked = mask.bits[tok];
                let k = clip.index(t, y, x, 0);
                let orig = to_rgb(&clip.data()[k..k + c]);
                let col = t * d.w + x;
                image.set(y, col, orig);
                image.set(d.h + y, col, if masked { [MASK_GRAY; 3] } else { orig });
                let rec = match (&recon, masked) {
                    (_, false) => orig,
                    (Some(r), true) => {
                        let v: Vec<f32> = r[k..k + c].iter().map(|v| v.clamp(0.0, 1.0)).collect();
                        to_rgb(&v)
                    }
                    (None, true) => [MASK_GRAY; 3],
                };
                image.set(2 * d.h + y, col, rec);
                let mv = match &motion {
                    Some(m) => {
                        let base = (((t / ct) * d.h + y) * d.w + x) * c;
                        let mean = m[base..base + c].iter().sum::<f32>() / c as f32;
                        (mean * MOTION_GAIN).clamp(0.0, 1.0)
                    }
                    None => 0.0,
                };
                image.set(3 * d.h + y, col, [mv; 3]);
            }
        }
    }
    Ok(ReconGrid { image, frame_h: d.h, frame_w: d.w, frames: d.t })
}

/// Fraction of rows whose label is among the `k` largest logits. Equal
/// logits rank the lower class index first.
pub fn topk_accuracy(logits: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::shape("topk_accuracy", format!("{} logit rows, {} labels", logits.len(), labels.len())));
    }
    if logits.is_empty() {
        return Err(Error::invalid("logits", "no samples"));
    }
    let mut hits = 0usize;
    for (row, &y) in logits.iter().zip(labels) {
        if k == 0 || k > row.len() || y >= row.len() {
            return Err(Error::invalid("k", format!("k = {k}, label {y}, {} classes", row.len())));
        }
        let ly = row[y];
        let ahead = row.iter().enumerate().filter(|&(j, &l)| l > ly || (l == ly && j < y)).count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / logits.len() as f64)
}

/// Evenly spaced clip starts; a single view is centred.
pub fn temporal_starts(len: usize, clip_len: usize, stride: usize, k: usize) -> Result<Vec<usize>> {
    let span = clip_len.saturating_sub(1) * stride + 1;
    if k == 0 || clip_len == 0 || stride == 0 || span > len {
        return Err(Error::invalid(
            "video",
            format!("{len} frames cannot hold {k} views of {clip_len} frames at stride {stride}"),
        ));
    }
    let room = len - span;
    Ok(if k == 1 {
        vec![room / 2]
    } else {
        (0..k).map(|i| (i * room + (k - 1) / 2) / (k - 1)).collect()
    })
}

/// Three square windows of side `min(H, W)` tiling the longer axis: start,
/// centre, end.
pub fn spatial_windows(h: usize, w: usize) -> [CropWindow; 3] {
    let s = h.min(w);
    let offsets = |long: usize| [0, (long - s) / 2, long - s];
    if w >= h {
        offsets(w).map(|o| CropWindow { top: 0, left: o, height: s, width: s })
    } else {
        offsets(h).map(|o| CropWindow { top: o, left: 0, height: s, width: s })
    }
}

/// The `3K` view clips, temporal-major, each resized to the model's frame size.
pub fn view_clips(video: &Clip, clip_len: usize, stride: usize, k: usize, out_h: usize, out_w: usize) -> Result<Vec<Clip>> {
    let d = video.dims();
    let mut views = Vec::with_capacity(3 * k);
    for start in temporal_starts(d.t, clip_len, stride, k)? {
        let c = sample_clip(video, clip_len, stride, start)?;
        for win in spatial_windows(d.h, d.w) {
            views.push(crop_resize(&c, win, out_h, out_w)?);
        }
    }
    Ok(views)
}

/// Mean logits over a set of per-view logits, accumulated in `f64` in view
/// order. Identical `f32`-valued views average back to themselves exactly.
pub fn average_logits(views: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = views.first().ok_or_else(|| Error::invalid("views", "no views"))?;
    let mut acc = vec![0.0f64; first.len()];
    for v in views {
        if v.len() != acc.len() {
            return Err(Error::shape("average_logits", format!("{} vs {} classes", v.len(), acc.len())));
        }
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    let n = views.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Averaged classifier logits over `K` temporal clips times 3 spatial crops.
pub fn multiview_logits<T: Scalar>(
    cfg: &ModelConfig,
    state: &ModelState<T>,
    video: &Clip,
    stride: usize,
    k: usize,
) -> Result<Vec<f64>> {
    let dims = cfg.grid.clip_dims();
    let per_view = view_clips(video, dims.t, stride, k, dims.h, dims.w)?
        .iter()
        .map(|v| classify_values(cfg, state, v))
        .collect::<Result<Vec<_>>>()?;
    average_logits(&per_view)
}
