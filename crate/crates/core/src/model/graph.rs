use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{DecoderArch, ModelConfig};
use super::params::ModelState;
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::{patchify, sincos_posenc, split_visible, Mask};
use crate::videodata::Clip;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Space,
    Time,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Space => "space",
            Head::Time => "time",
        }
    }
}

/// Prediction handles for every grid position, `[N, D]` and `[N, Dm]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PretrainOutput {
    pub space: Option<Var>,
    pub time: Option<Var>,
}

/// One forward evaluation of the model recorded on a fresh tape.
///
/// Every parameter of the bound state becomes a tracked leaf, so a loss built
/// from the outputs can be differentiated with [`ModelGraph::gradients`].
pub struct ModelGraph<'a, T> {
    pub tape: Tape<T>,
    cfg: &'a ModelConfig,
    state: &'a ModelState<T>,
    vars: Vec<Var>,
    use_posenc: bool,
    attention: Option<Vec<Var>>,
}

impl<'a, T: Scalar> ModelGraph<'a, T> {
    pub fn new(cfg: &'a ModelConfig, state: &'a ModelState<T>) -> Result<Self> {
        let mut tape = Tape::new();
        let vars = state.tensors().iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        Ok(ModelGraph { tape, cfg, state, vars, use_posenc: true, attention: None })
    }

    /// Keeps a handle to every attention-probability matrix computed.
    pub fn record_attention(mut self) -> Self {
        self.attention = Some(Vec::new());
        self
    }

    /// Drops positional encodings from encoder and decoder inputs.
    pub fn without_posenc(mut self) -> Self {
        self.use_posenc = false;
        self
    }

    pub fn attention(&self) -> &[Var] {
        self.attention.as_deref().unwrap_or(&[])
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of `loss` for every parameter, in state order. Parameters
    /// the loss does not reach get zeros.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Tensor<T>>> {
        let g = self.tape.backward(loss)?;
        Ok(self.vars.iter().zip(self.state.tensors()).map(|(&v, p)| g.get_or_zeros(v, p)).collect())
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.state.position(name).map(|i| self.vars[i]).ok_or_else(|| Error::UnknownParameter(String::from(name)))
    }

    fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.p(&format!("{name}.gamma"))?;
        let b = self.p(&format!("{name}.beta"))?;
        self.tape.layer_norm(x, g, b, T::from_f64(LN_EPS))
    }

    fn attention_layer(&mut self, x: Var, name: &str, heads: usize) -> Result<Var> {
        let dim = self.tape.value(x).cols();
        let dh = dim / heads;
        let qkv = self.linear(x, &format!("{name}.qkv"))?;
        let scale = T::one() / T::from_usize(dh).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = self.tape.slice_cols(qkv, h * dh, dh)?;
            let k = self.tape.slice_cols(qkv, dim + h * dh, dh)?;
            let v = self.tape.slice_cols(qkv, 2 * dim + h * dh, dh)?;
            let kt = self.tape.transpose(k)?;
            let s = self.tape.matmul(q, kt)?;
            let s = self.tape.scale(s, scale)?;
            let p = self.tape.softmax(s, 1)?;
            if let Some(log) = self.attention.as_mut() {
                log.push(p);
            }
            outs.push(self.tape.matmul(p, v)?);
        }
        let o = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs)? };
        self.linear(o, &format!("{name}.proj"))
    }

    /// Pre-norm transformer block with joint attention over all rows.
    fn block(&mut self, x: Var, name: &str, heads: usize) -> Result<Var> {
        let h = self.norm(x, &format!("{name}.norm1"))?;
        let a = self.attention_layer(h, &format!("{name}.attn"), heads)?;
        let x = self.tape.add(x, a)?;
        let h = self.norm(x, &format!("{name}.norm2"))?;
        let h = self.linear(h, &format!("{name}.mlp.fc1"))?;
        let h = self.tape.gelu(h)?;
        let h = self.linear(h, &format!("{name}.mlp.fc2"))?;
        self.tape.add(x, h)
    }

    fn add_posenc(&mut self, x: Var, dim: usize, rows: Option<&[usize]>) -> Result<Var> {
        if !self.use_posenc {
            return Ok(x);
        }
        let pe = sincos_posenc::<T>(&self.cfg.grid, dim)?;
        let pe = match rows {
            Some(idx) => pe.gather_rows(idx)?,
            None => pe,
        };
        let pe = self.tape.constant(pe)?;
        self.tape.add(x, pe)
    }

    /// Encodes visible tokens `[Nv, D]` located at `visible_idx`; returns
    /// latents `[Nv, E]`.
    pub fn encode(&mut self, visible_tokens: &Tensor<T>, visible_idx: &[usize]) -> Result<Var> {
        if visible_idx.is_empty() {
            return Err(Error::NoVisibleTokens);
        }
        let d = self.cfg.grid.token_dim();
        if visible_tokens.rank() != 2 || visible_tokens.rows() != visible_idx.len() || visible_tokens.cols() != d {
            return Err(Error::shape(
                "encode",
                format!("{:?} tokens for {} indices of width {d}", visible_tokens.shape(), visible_idx.len()),
            ));
        }
        if let Some(&bad) = visible_idx.iter().find(|&&i| i >= self.cfg.grid.num_tokens()) {
            return Err(Error::shape("encode", format!("token index {bad} outside the grid")));
        }
        let enc = self.cfg.encoder;
        let x = self.tape.constant(visible_tokens.clone())?;
        let mut x = self.linear(x, "encoder.patch_embed")?;
        x = self.add_posenc(x, enc.embed_dim, Some(visible_idx))?;
        for i in 0..enc.depth {
            x = self.block(x, &format!("encoder.blocks.{i}"), enc.heads)?;
        }
        self.norm(x, "encoder.norm")
    }

    fn head_enabled(&self, head: Head) -> bool {
        match head {
            Head::Space => self.cfg.target_kind.has_space(),
            Head::Time => self.cfg.target_kind.has_time(),
        }
    }

    /// Projects latents to the decoder width and scatters them onto the full
    /// grid, filling masked positions with the stack's mask token.
    pub fn assemble_decoder_input(&mut self, latents: Var, mask: &Mask, prefix: &str) -> Result<Var> {
        let n = self.cfg.grid.num_tokens();
        if mask.len() != n {
            return Err(Error::shape("decode", format!("mask of {} for {n} tokens", mask.len())));
        }
        let visible = mask.visible_indices();
        if self.tape.value(latents).rows() != visible.len() {
            return Err(Error::shape(
                "decode",
                format!("{} latents for {} visible tokens", self.tape.value(latents).rows(), visible.len()),
            ));
        }
        let ed = self.cfg.decoder.embed_dim;
        let y = self.linear(latents, &format!("{prefix}.embed"))?;
        let token = self.p(&format!("{prefix}.mask_token"))?;
        let token = self.tape.reshape(token, &[1, ed])?;
        let stacked = self.tape.concat_rows(&[y, token])?;
        let mut rank = 0;
        let order: Vec<usize> = mask
            .bits
            .iter()
            .map(|&masked| {
                if masked {
                    visible.len()
                } else {
                    rank += 1;
                    rank - 1
                }
            })
            .collect();
        let full = self.tape.gather_rows(stacked, &order)?;
        self.add_posenc(full, ed, None)
    }

    fn decoder_stack(&mut self, latents: Var, mask: &Mask, prefix: &str) -> Result<Var> {
        let dec = self.cfg.decoder;
        let mut x = self.assemble_decoder_input(latents, mask, prefix)?;
        for i in 0..dec.depth {
            x = self.block(x, &format!("{prefix}.blocks.{i}"), dec.heads)?;
        }
        self.norm(x, &format!("{prefix}.norm"))
    }

    fn pred_name(&self, head: Head) -> String {
        match (self.cfg.decoder.arch, head) {
            (DecoderArch::Parallel, h) => format!("decoder.{}.pred", h.name()),
            (DecoderArch::Shared, h) => format!("decoder.shared.pred_{}", h.name()),
        }
    }

    fn stack_prefix(&self, head: Head) -> String {
        match self.cfg.decoder.arch {
            DecoderArch::Parallel => format!("decoder.{}", head.name()),
            DecoderArch::Shared => String::from("decoder.shared"),
        }
    }

    /// Runs one decoder head and returns predictions for all `N` positions.
    pub fn decode(&mut self, latents: Var, mask: &Mask, head: Head) -> Result<Var> {
        if !self.head_enabled(head) {
            return Err(Error::HeadDisabled(head.name()));
        }
        let prefix = self.stack_prefix(head);
        let h = self.decoder_stack(latents, mask, &prefix)?;
        let name = self.pred_name(head);
        self.linear(h, &name)
    }

    /// Patchify, keep visible tokens, encode, and run every enabled head.
    pub fn forward_pretrain(&mut self, clip: &Clip, mask: &Mask) -> Result<PretrainOutput> {
        let (tokens, grid) = patchify(clip, self.cfg.grid.cube)?;
        if grid != self.cfg.grid {
            return Err(Error::shape("forward_pretrain", format!("clip grid {grid:?} vs model {:?}", self.cfg.grid)));
        }
        let (visible, vis_idx, _) = split_visible(&tokens, mask)?;
        let latents = self.encode(&visible.cast(), &vis_idx)?;
        let kind = self.cfg.target_kind;
        match self.cfg.decoder.arch {
            DecoderArch::Parallel => {
                let space = if kind.has_space() { Some(self.decode(latents, mask, Head::Space)?) } else { None };
                let time = if kind.has_time() { Some(self.decode(latents, mask, Head::Time)?) } else { None };
                Ok(PretrainOutput { space, time })
            }
            DecoderArch::Shared => {
                let h = self.decoder_stack(latents, mask, "decoder.shared")?;
                let space = if kind.has_space() { Some(self.linear(h, "decoder.shared.pred_space")?) } else { None };
                let time = if kind.has_time() { Some(self.linear(h, "decoder.shared.pred_time")?) } else { None };
                Ok(PretrainOutput { space, time })
            }
        }
    }

    /// Encodes every token of `clip`, mean-pools and projects to
    /// `[1, num_classes]` logits.
    pub fn classify(&mut self, clip: &Clip) -> Result<Var> {
        let (tokens, grid) = patchify(clip, self.cfg.grid.cube)?;
        if grid != self.cfg.grid {
            return Err(Error::shape("classify", format!("clip grid {grid:?} vs model {:?}", self.cfg.grid)));
        }
        let all: Vec<usize> = (0..grid.num_tokens()).collect();
        let latents = self.encode(&tokens.cast(), &all)?;
        let pooled = self.tape.mean_rows(latents)?;
        self.linear(pooled, "head")
    }

    /// Mean cross-entropy over a batch of clips.
    pub fn classify_batch_loss(&mut self, clips: &[&Clip], labels: &[usize]) -> Result<Var> {
        let mut rows = Vec::with_capacity(clips.len());
        for clip in clips {
            rows.push(self.classify(clip)?);
        }
        let logits = self.tape.concat_rows(&rows)?;
        self.tape.cross_entropy(logits, labels)
    }
}

/// Logits of a single clip as plain values.
pub fn classify_values<T: Scalar>(cfg: &ModelConfig, state: &ModelState<T>, clip: &Clip) -> Result<Vec<f64>> {
    let mut g = ModelGraph::new(cfg, state)?;
    let out = g.classify(clip)?;
    Ok(g.value(out).data().iter().map(|v| v.as_f64()).collect())
}
