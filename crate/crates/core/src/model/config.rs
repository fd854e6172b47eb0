use alloc::format;

use crate::targets::TargetKind;
use crate::tokenizer::TokenGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

/// `Parallel` runs two independent decoder stacks; `Shared` runs one stack
/// with two output projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderArch {
    Parallel,
    Shared,
}

impl DecoderArch {
    pub fn name(self) -> &'static str {
        match self {
            DecoderArch::Parallel => "parallel",
            DecoderArch::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "parallel" => Some(DecoderArch::Parallel),
            "shared" => Some(DecoderArch::Shared),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DecoderConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub arch: DecoderArch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub grid: TokenGrid,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub target_kind: TargetKind,
    pub num_classes: usize,
}

/// Named size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// For tests and desk experiments on tiny synthetic clips.
    Tiny,
    /// Scaled-down default: encoder 192×4, decoder 96×2.
    Desk,
    /// ViT-B encoder (768×12) with a 384×4 decoder.
    Base,
    /// ViT-L encoder (1024×24) with a 512×4 decoder.
    Large,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" => Some(Preset::Tiny),
            "desk" => Some(Preset::Desk),
            "base" => Some(Preset::Base),
            "large" => Some(Preset::Large),
            _ => None,
        }
    }

    pub fn dims(self) -> (EncoderConfig, DecoderConfig) {
        let (e, d) = match self {
            Preset::Tiny => ((2, 32, 2), (1, 32, 2)),
            Preset::Desk => ((4, 192, 3), (2, 96, 3)),
            Preset::Base => ((12, 768, 12), (4, 384, 6)),
            Preset::Large => ((24, 1024, 16), (4, 512, 8)),
        };
        (
            EncoderConfig { depth: e.0, embed_dim: e.1, heads: e.2, mlp_ratio: 4 },
            DecoderConfig { depth: d.0, embed_dim: d.1, heads: d.2, mlp_ratio: 4, arch: DecoderArch::Parallel },
        )
    }
}

impl ModelConfig {
    pub fn from_preset(preset: Preset, grid: TokenGrid, target_kind: TargetKind, num_classes: usize) -> Self {
        let (encoder, decoder) = preset.dims();
        ModelConfig { grid, encoder, decoder, target_kind, num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("encoder.depth", self.encoder.depth >= 1, "must be at least 1"),
            ("decoder.depth", self.decoder.depth >= 1, "must be at least 1"),
            ("encoder.heads", self.encoder.heads >= 1, "must be at least 1"),
            ("decoder.heads", self.decoder.heads >= 1, "must be at least 1"),
            ("encoder.mlp_ratio", self.encoder.mlp_ratio >= 1, "must be at least 1"),
            ("decoder.mlp_ratio", self.decoder.mlp_ratio >= 1, "must be at least 1"),
            ("num_classes", self.num_classes >= 2, "need at least two classes"),
        ];
        for (name, ok, why) in checks {
            if !ok {
                return Err(Error::invalid(name, why));
            }
        }
        for (name, dim, heads) in [
            ("encoder.embed_dim", self.encoder.embed_dim, self.encoder.heads),
            ("decoder.embed_dim", self.decoder.embed_dim, self.decoder.heads),
        ] {
            if dim < 6 || dim % heads != 0 {
                return Err(Error::invalid(name, format!("{dim} must be >= 6 and divisible by {heads} heads")));
            }
        }
        if self.grid.num_tokens() == 0 {
            return Err(Error::invalid("grid", "empty token grid"));
        }
        Ok(())
    }
}
