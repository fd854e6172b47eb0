use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::config::{DecoderArch, ModelConfig};
use crate::numerics::{Scalar, Tensor};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal truncated at two standard deviations.
    TruncNormal(f64),
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Which parameter set a state carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    /// Encoder plus the decoder heads enabled by the target kind.
    Pretrain,
    /// Encoder plus the linear classifier.
    Finetune,
}

const WEIGHT_STD: f64 = 0.02;

fn push_linear(out: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec { name: format!("{name}.weight"), shape: vec![fan_in, fan_out], init: Init::TruncNormal(WEIGHT_STD) });
    out.push(ParamSpec { name: format!("{name}.bias"), shape: vec![fan_out], init: Init::Zeros });
}

fn push_norm(out: &mut Vec<ParamSpec>, name: &str, dim: usize) {
    out.push(ParamSpec { name: format!("{name}.gamma"), shape: vec![dim], init: Init::Ones });
    out.push(ParamSpec { name: format!("{name}.beta"), shape: vec![dim], init: Init::Zeros });
}

fn push_blocks(out: &mut Vec<ParamSpec>, prefix: &str, depth: usize, dim: usize, mlp_ratio: usize) {
    for i in 0..depth {
        let b = format!("{prefix}.blocks.{i}");
        push_norm(out, &format!("{b}.norm1"), dim);
        push_linear(out, &format!("{b}.attn.qkv"), dim, 3 * dim);
        push_linear(out, &format!("{b}.attn.proj"), dim, dim);
        push_norm(out, &format!("{b}.norm2"), dim);
        push_linear(out, &format!("{b}.mlp.fc1"), dim, mlp_ratio * dim);
        push_linear(out, &format!("{b}.mlp.fc2"), mlp_ratio * dim, dim);
    }
}

/// Names, shapes and initializers of every parameter, in a stable order.
pub fn param_specs(cfg: &ModelConfig, kind: StateKind) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let e = cfg.encoder.embed_dim;
    push_linear(&mut out, "encoder.patch_embed", cfg.grid.token_dim(), e);
    push_blocks(&mut out, "encoder", cfg.encoder.depth, e, cfg.encoder.mlp_ratio);
    push_norm(&mut out, "encoder.norm", e);
    match kind {
        StateKind::Finetune => push_linear(&mut out, "head", e, cfg.num_classes),
        StateKind::Pretrain => {
            let dd = cfg.decoder;
            let stack = |out: &mut Vec<ParamSpec>, p: &str| {
                push_linear(out, &format!("{p}.embed"), e, dd.embed_dim);
                out.push(ParamSpec {
                    name: format!("{p}.mask_token"),
                    shape: vec![dd.embed_dim],
                    init: Init::Normal(WEIGHT_STD),
                });
                push_blocks(out, p, dd.depth, dd.embed_dim, dd.mlp_ratio);
                push_norm(out, &format!("{p}.norm"), dd.embed_dim);
            };
            let (space, time) = (cfg.target_kind.has_space(), cfg.target_kind.has_time());
            match dd.arch {
                DecoderArch::Parallel => {
                    if space {
                        stack(&mut out, "decoder.space");
                        push_linear(&mut out, "decoder.space.pred", dd.embed_dim, cfg.grid.token_dim());
                    }
                    if time {
                        stack(&mut out, "decoder.time");
                        push_linear(&mut out, "decoder.time.pred", dd.embed_dim, cfg.grid.motion_dim());
                    }
                }
                DecoderArch::Shared => {
                    stack(&mut out, "decoder.shared");
                    if space {
                        push_linear(&mut out, "decoder.shared.pred_space", dd.embed_dim, cfg.grid.token_dim());
                    }
                    if time {
                        push_linear(&mut out, "decoder.shared.pred_time", dd.embed_dim, cfg.grid.motion_dim());
                    }
                }
            }
        }
    }
    out
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ModelState<T> {
    pub fn init(cfg: &ModelConfig, kind: StateKind, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut named = Vec::new();
        for spec in param_specs(cfg, kind) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Normal(std) => (0..n)
                    .map(|_| T::from_f64(std * rng.sample::<f64, _>(StandardNormal)))
                    .collect(),
                Init::TruncNormal(std) => (0..n)
                    .map(|_| loop {
                        let z: f64 = rng.sample(StandardNormal);
                        if z.abs() <= 2.0 {
                            break T::from_f64(std * z);
                        }
                    })
                    .collect(),
            };
            named.push((spec.name, Tensor::new(spec.shape, data)?));
        }
        Self::from_named(named)
    }

    pub fn from_named(named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (i, (name, t)) in named.into_iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFinite { op: "model_state" });
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid("parameter", format!("duplicate name `{name}`")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelState { names, tensors, index })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies every parameter whose name starts with `prefix` from `src`.
    /// Shapes must agree.
    pub fn copy_prefix_from(&mut self, src: &ModelState<T>, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (i, name) in self.names.iter().enumerate() {
            if !name.starts_with(prefix) {
                continue;
            }
            let other = src.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if other.shape() != self.tensors[i].shape() {
                return Err(Error::shape(
                    "copy_prefix_from",
                    format!("{name}: {:?} vs {:?}", other.shape(), self.tensors[i].shape()),
                ));
            }
            self.tensors[i] = other.clone();
            copied += 1;
        }
        Ok(copied)
    }
}
