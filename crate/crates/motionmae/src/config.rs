//! Strict JSON run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use motionmae_core::model::{DecoderArch, DecoderConfig, EncoderConfig, ModelConfig, Preset};
use motionmae_core::targets::{TargetConfig, TargetKind};
use motionmae_core::tokenizer::{CubeDims, MaskStrategy, TokenGrid};
use motionmae_core::training::{LossKind, TrainConfig};
use motionmae_core::videodata::ClipDims;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Defaults, printed by `--help`.
pub const DEFAULTS_HELP: &str = "\
Run configuration (JSON, unknown keys rejected). Defaults:
  seed                      0      data = seed+1, mask = seed+2, init = seed+3
  out_dir                   \"runs/default\"
  data.dataset_dir          null   directory with clips/*.mmae and labels.tsv
  data.val_dir              null   labelled validation set for finetune
  data.frames               8      video length written by gen-data
  data.clip_len             8      frames per training clip (T)
  data.stride               1      temporal stride when sampling clips
  data.height, data.width   16     model input frame size
  data.channels             1
  data.max_speed            2      synthetic speed range 1..=max_speed px/frame
  data.flip                 false  random horizontal flip (off for direction labels)
  data.crop_scale           null   e.g. [0.5, 1.0] enables random resized crop
  mask.ratio                0.9
  mask.strategy             \"random\"   random | tube | time_only
  mask.seed                 null   overrides seed+2
  targets.kind              \"both\"     frame | motion | both
  targets.gap               1
  targets.normalize         false  per-patch standardization of frame targets
  targets.signed            false  signed instead of absolute motion
  targets.lambda            1.0    weight of the time-head loss
  model.preset              \"tiny\"     tiny | desk | base | large
  model.cube                [2, 4] temporal and spatial cube size
  model.encoder/decoder     null   {depth, embed_dim, heads, mlp_ratio} overrides
  model.arch                \"parallel\" parallel | shared
  model.num_classes         4
  train.lr                  1.5e-4
  train.betas               [0.9, 0.95]
  train.eps                 1e-8
  train.weight_decay        0.05
  train.total_steps         1000
  train.warmup_steps        null   5% of total_steps
  train.batch_size          8
  train.loss                \"mse\"      mse | l1 | smooth_l1
  train.precision           \"single\"
  train.log_interval        1
  train.checkpoint_interval null   only the final checkpoint
  finetune.*                lr 1e-3, betas [0.9, 0.999], eps 1e-8, weight_decay 0.05,
                            total_steps 500, warmup_steps null (5%), batch_size 16,
                            views 1 (temporal clips at eval, times 3 crops)
  ablate.target_kind        [\"frame\", \"motion\", \"both\"]
  ablate.gap                [1, 2, 4]
  ablate.loss_kind          [\"mse\", \"l1\", \"smooth_l1\"]
  ablate.ratio              [0.75, 0.9, 0.95]
  ablate.decoder            [\"parallel\", \"shared\", \"16x1\", \"64x2\"]  arch or WIDTHxDEPTH
Environment: MOTIONMAE_THREADS caps worker threads (default 1).";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub mask: MaskSection,
    pub targets: TargetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dataset_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub frames: usize,
    pub clip_len: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub max_speed: i32,
    pub flip: bool,
    pub crop_scale: Option<[f64; 2]>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dataset_dir: None,
            val_dir: None,
            frames: 8,
            clip_len: 8,
            stride: 1,
            height: 16,
            width: 16,
            channels: 1,
            max_speed: 2,
            flip: false,
            crop_scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub ratio: f64,
    pub strategy: String,
    pub seed: Option<u64>,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection { ratio: 0.9, strategy: "random".into(), seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub kind: String,
    pub gap: usize,
    pub normalize: bool,
    pub signed: bool,
    pub lambda: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection { kind: "both".into(), gap: 1, normalize: false, signed: false, lambda: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSection {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub cube: [usize; 2],
    pub encoder: Option<StackSection>,
    pub decoder: Option<StackSection>,
    pub arch: String,
    pub num_classes: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "tiny".into(),
            cube: [2, 4],
            encoder: None,
            decoder: None,
            arch: "parallel".into(),
            num_classes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
    pub warmup_steps: Option<u64>,
    pub batch_size: usize,
    pub loss: String,
    pub precision: String,
    pub log_interval: u64,
    pub checkpoint_interval: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1.5e-4,
            betas: [0.9, 0.95],
            eps: 1e-8,
            weight_decay: 0.05,
            total_steps: 1000,
            warmup_steps: None,
            batch_size: 8,
            loss: "mse".into(),
            precision: "single".into(),
            log_interval: 1,
            checkpoint_interval: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
    pub warmup_steps: Option<u64>,
    pub batch_size: usize,
    pub views: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.05,
            total_steps: 500,
            warmup_steps: None,
            batch_size: 16,
            views: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub target_kind: Vec<String>,
    pub gap: Vec<usize>,
    pub loss_kind: Vec<String>,
    pub ratio: Vec<f64>,
    pub decoder: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            target_kind: vec!["frame".into(), "motion".into(), "both".into()],
            gap: vec![1, 2, 4],
            loss_kind: vec!["mse".into(), "l1".into(), "smooth_l1".into()],
            ratio: vec![0.75, 0.9, 0.95],
            decoder: vec!["parallel".into(), "shared".into(), "16x1".into(), "64x2".into()],
        }
    }
}

fn unknown(field: &str, value: &str, allowed: &str) -> Error {
    Error::config(format!("{field}: unknown value `{value}` (expected one of {allowed})"))
}

pub fn parse_target_kind(field: &str, s: &str) -> Result<TargetKind> {
    TargetKind::parse(s).ok_or_else(|| unknown(field, s, "frame, motion, both"))
}

pub fn parse_loss_kind(field: &str, s: &str) -> Result<LossKind> {
    LossKind::parse(s).ok_or_else(|| unknown(field, s, "mse, l1, smooth_l1"))
}

/// A decoder setting: an architecture name or `WIDTHxDEPTH`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderSetting {
    Arch(DecoderArch),
    Size { embed_dim: usize, depth: usize },
}

pub fn parse_decoder_setting(field: &str, s: &str) -> Result<DecoderSetting> {
    if let Some(a) = DecoderArch::parse(s) {
        return Ok(DecoderSetting::Arch(a));
    }
    let size = s.split_once('x').and_then(|(w, d)| Some((w.parse().ok()?, d.parse().ok()?)));
    match size {
        Some((embed_dim, depth)) => Ok(DecoderSetting::Size { embed_dim, depth }),
        None => Err(unknown(field, s, "parallel, shared, WIDTHxDEPTH")),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/default"))
    }

    /// Checks every field that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train_config()?;
        self.finetune_config()?;
        if self.train.precision != "single" {
            return Err(if self.train.precision == "double" {
                Error::config("train.precision: `double` is reserved for gradient checks; training runs in single precision")
            } else {
                unknown("train.precision", &self.train.precision, "single")
            });
        }
        let d = &self.data;
        if d.frames < d.clip_len.saturating_sub(1) * d.stride + 1 {
            return Err(Error::config(format!(
                "data.frames: {} frames cannot hold a clip of {} at stride {}",
                d.frames, d.clip_len, d.stride
            )));
        }
        if d.stride == 0 || d.max_speed < 1 {
            return Err(Error::config("data.stride and data.max_speed must be at least 1"));
        }
        if let Some([lo, hi]) = d.crop_scale {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::config("data.crop_scale: need 0 < lo <= hi <= 1"));
            }
        }
        if self.train.log_interval == 0 || self.train.checkpoint_interval == Some(0) {
            return Err(Error::config("train.log_interval and train.checkpoint_interval must be positive"));
        }
        if self.finetune.views == 0 {
            return Err(Error::config("finetune.views must be at least 1"));
        }
        for s in &self.ablate.target_kind {
            parse_target_kind("ablate.target_kind", s)?;
        }
        for s in &self.ablate.loss_kind {
            parse_loss_kind("ablate.loss_kind", s)?;
        }
        for s in &self.ablate.decoder {
            parse_decoder_setting("ablate.decoder", s)?;
        }
        Ok(())
    }

    pub fn clip_dims(&self) -> ClipDims {
        ClipDims::new(self.data.clip_len, self.data.height, self.data.width, self.data.channels)
    }

    /// Dimensions of the videos written by `gen-data`.
    pub fn video_dims(&self) -> ClipDims {
        ClipDims::new(self.data.frames, self.data.height, self.data.width, self.data.channels)
    }

    pub fn target_kind(&self) -> Result<TargetKind> {
        parse_target_kind("targets.kind", &self.targets.kind)
    }

    pub fn mask_strategy(&self) -> Result<MaskStrategy> {
        MaskStrategy::parse(&self.mask.strategy)
            .ok_or_else(|| unknown("mask.strategy", &self.mask.strategy, "random, tube, time_only"))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let preset = Preset::parse(&m.preset).ok_or_else(|| unknown("model.preset", &m.preset, "tiny, desk, base, large"))?;
        let arch = DecoderArch::parse(&m.arch).ok_or_else(|| unknown("model.arch", &m.arch, "parallel, shared"))?;
        let cube = CubeDims { t: m.cube[0], p: m.cube[1] };
        if cube.t == 0 || cube.p == 0 {
            return Err(Error::config("model.cube: sizes must be positive"));
        }
        let grid = TokenGrid::for_clip(self.clip_dims(), cube)
            .map_err(|e| Error::config(format!("model.cube: {e}")))?;
        let mut cfg = ModelConfig::from_preset(preset, grid, self.target_kind()?, m.num_classes);
        if let Some(e) = m.encoder {
            cfg.encoder = EncoderConfig { depth: e.depth, embed_dim: e.embed_dim, heads: e.heads, mlp_ratio: e.mlp_ratio };
        }
        if let Some(d) = m.decoder {
            cfg.decoder = DecoderConfig { depth: d.depth, embed_dim: d.embed_dim, heads: d.heads, mlp_ratio: d.mlp_ratio, arch };
        }
        cfg.decoder.arch = arch;
        cfg.validate().map_err(|e| Error::config(format!("model: {e}")))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let mut c = TrainConfig::with_steps(t.total_steps).seeded(self.seed);
        c.lr = t.lr;
        c.betas = (t.betas[0], t.betas[1]);
        c.eps = t.eps;
        c.weight_decay = t.weight_decay;
        c.warmup_steps = t.warmup_steps.unwrap_or(t.total_steps / 20);
        c.batch_size = t.batch_size;
        c.targets = TargetConfig {
            kind: self.target_kind()?,
            gap: self.targets.gap,
            normalize: self.targets.normalize,
            signed_motion: self.targets.signed,
        };
        c.lambda = self.targets.lambda;
        c.loss_kind = parse_loss_kind("train.loss", &t.loss)?;
        c.mask_ratio = self.mask.ratio;
        c.mask_strategy = self.mask_strategy()?;
        if let Some(s) = self.mask.seed {
            c.mask_seed = s;
        }
        if t.total_steps == 0 {
            return Err(Error::config("train.total_steps must be positive"));
        }
        if self.targets.gap >= self.data.clip_len {
            return Err(Error::config(format!("targets.gap: {} must be below data.clip_len", self.targets.gap)));
        }
        c.validate().map_err(|e| Error::config(format!("train: {e}")))?;
        Ok(c)
    }

    /// Optimizer and schedule for supervised finetuning; the data stream is
    /// offset from pretraining so the two runs see independent orders.
    pub fn finetune_config(&self) -> Result<TrainConfig> {
        let f = &self.finetune;
        let mut c = TrainConfig::with_steps(f.total_steps).seeded(self.seed.wrapping_add(100));
        c.lr = f.lr;
        c.betas = (f.betas[0], f.betas[1]);
        c.eps = f.eps;
        c.weight_decay = f.weight_decay;
        c.warmup_steps = f.warmup_steps.unwrap_or(f.total_steps / 20);
        c.batch_size = f.batch_size;
        if f.total_steps == 0 {
            return Err(Error::config("finetune.total_steps must be positive"));
        }
        c.validate().map_err(|e| Error::config(format!("finetune: {e}")))?;
        Ok(c)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn data_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let m = c.model_config().unwrap();
        assert_eq!(m.grid.num_tokens(), 64);
        let t = c.train_config().unwrap();
        assert_eq!((t.lr, t.betas, t.weight_decay, t.warmup_steps), (1.5e-4, (0.9, 0.95), 0.05, 50));
        assert_eq!((t.data_seed, t.mask_seed), (1, 2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_json(r#"{"mask": {"ratoi": 0.5}}"#).unwrap_err();
        assert!(e.to_string().contains("ratoi"), "{e}");
        assert_eq!(e.exit_code(), 2);
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn bad_enum_values_name_the_field() {
        let e = RunConfig::from_json(r#"{"mask": {"strategy": "diagonal"}}"#).unwrap_err();
        assert!(e.to_string().contains("mask.strategy"), "{e}");
        let e = RunConfig::from_json(r#"{"train": {"precision": "double"}}"#).unwrap_err();
        assert!(e.to_string().contains("train.precision"), "{e}");
        let e = RunConfig::from_json(r#"{"ablate": {"decoder": ["wide"]}}"#).unwrap_err();
        assert!(e.to_string().contains("ablate.decoder"), "{e}");
        assert!(RunConfig::from_json(r#"{"mask": {"ratio": 1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"cube": [3, 4]}}"#).is_err());
    }

    #[test]
    fn decoder_settings() {
        assert_eq!(parse_decoder_setting("d", "shared").unwrap(), DecoderSetting::Arch(DecoderArch::Shared));
        assert_eq!(parse_decoder_setting("d", "64x2").unwrap(), DecoderSetting::Size { embed_dim: 64, depth: 2 });
        assert!(parse_decoder_setting("d", "64x").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_json(
            r#"{"seed": 5, "mask": {"seed": 99}, "model": {"encoder": {"depth": 1, "embed_dim": 12, "heads": 2}, "arch": "shared"}}"#,
        )
        .unwrap();
        let m = c.model_config().unwrap();
        assert_eq!((m.encoder.depth, m.encoder.embed_dim, m.encoder.mlp_ratio), (1, 12, 4));
        assert_eq!(m.decoder.arch, DecoderArch::Shared);
        let t = c.train_config().unwrap();
        assert_eq!((t.data_seed, t.mask_seed), (6, 99));
        assert_eq!(c.init_seed(), 8);
    }
}
