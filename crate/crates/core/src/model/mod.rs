//! Asymmetric masked autoencoder: a ViT encoder over visible tokens only and
//! a light decoder with a space head (frame patches) and a time head
//! (temporal-difference patches), plus the mean-pooled classifier used for
//! finetuning.

mod config;
mod graph;
mod params;

pub use config::{DecoderArch, DecoderConfig, EncoderConfig, ModelConfig, Preset};
pub use graph::{classify_values, Head, ModelGraph, PretrainOutput};
pub use params::{param_specs, Init, ModelState, ParamSpec, StateKind};
