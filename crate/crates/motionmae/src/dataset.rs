//! Directory-of-clips datasets: `clips/<id>.mmae` plus `labels.tsv` with one
//! `<id>\t<label>` line per clip.

use std::fmt::Write as _;
use std::path::Path;

use motionmae_core::rng::derive_seed;
use motionmae_core::videodata::{generate_moving_square, Clip, SyntheticSpec};

use crate::config::RunConfig;
use crate::rawclip::{load_clip, save_clip};
use crate::{Error, Result};

pub const LABELS_FILE: &str = "labels.tsv";
pub const CLIPS_DIR: &str = "clips";

/// Independent synthetic sample streams under one data seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
        }
    }
}

/// Clips in label-file order. Every id is unique.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub clips: Vec<Clip>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// `count` moving-square videos. Sample `i` depends only on the data seed,
/// the split and `i`, so a larger count extends a smaller one.
pub fn synthesize(cfg: &RunConfig, split: Split, count: usize) -> Result<Dataset> {
    let dims = cfg.video_dims();
    let base = cfg.data_seed();
    let mut ds = Dataset { ids: Vec::with_capacity(count), clips: Vec::with_capacity(count), labels: Vec::with_capacity(count) };
    for i in 0..count {
        let path = [split.stream(), i as u64];
        let spec = SyntheticSpec::random(dims, cfg.data.max_speed, derive_seed(base, &[path[0], path[1], 0]));
        let (clip, label) = generate_moving_square(&spec, dims, derive_seed(base, &[path[0], path[1], 1]))?;
        ds.ids.push(format!("{i:06}"));
        ds.clips.push(clip);
        ds.labels.push(label.index());
    }
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let clips = dir.join(CLIPS_DIR);
    std::fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let mut labels = String::new();
    for ((id, clip), label) in ds.ids.iter().zip(&ds.clips).zip(&ds.labels) {
        save_clip(clip, &clips.join(format!("{id}.mmae")))?;
        let _ = writeln!(labels, "{id}\t{label}");
    }
    let path = dir.join(LABELS_FILE);
    std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(LABELS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut ds = Dataset { ids: Vec::new(), clips: Vec::new(), labels: Vec::new() };
    let mut seen = std::collections::HashSet::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let malformed = |detail: String| Error::Malformed { what: "labels.tsv", detail: format!("line {}: {detail}", n + 1) };
        let (id, label) = line.split_once('\t').ok_or_else(|| malformed("expected `<id>\\t<label>`".into()))?;
        let label: usize = label.trim().parse().map_err(|_| malformed(format!("label `{label}` is not an integer")))?;
        if id.is_empty() || id.contains(['/', '\\']) || !seen.insert(id.to_string()) {
            return Err(malformed(format!("bad or duplicate id `{id}`")));
        }
        ds.clips.push(load_clip(&dir.join(CLIPS_DIR).join(format!("{id}.mmae")))?);
        ds.ids.push(id.to_string());
        ds.labels.push(label);
    }
    if ds.is_empty() {
        return Err(Error::Malformed { what: "labels.tsv", detail: "no clips listed".into() });
    }
    let dims = ds.clips[0].dims();
    if let Some(i) = ds.clips.iter().position(|c| c.dims() != dims) {
        return Err(Error::Malformed {
            what: "dataset",
            detail: format!("clip `{}` has dims {:?}, expected {dims:?}", ds.ids[i], ds.clips[i].dims()),
        });
    }
    Ok(ds)
}
