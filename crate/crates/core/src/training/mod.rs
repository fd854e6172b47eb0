//! Losses, the learning-rate schedule, and single optimization steps.
//!
//! A batch gradient is the mean of per-sample gradients summed in sample
//! order, so callers may compute samples concurrently and still combine
//! them bit-identically with [`mean_gradients`].

mod loss;
mod schedule;

pub use loss::{masked_loss, masked_loss_var, total_loss, total_loss_var, LossKind};
pub use schedule::lr_at;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::model::{ModelConfig, ModelGraph, ModelState};
use crate::numerics::{adamw_step, AdamWParams, OptimState, Scalar, Tensor};
use crate::rng::{derive_seed, rng_from_seed};
use crate::targets::{make_targets, TargetConfig};
use crate::tokenizer::{sample_mask, Mask, MaskStrategy};
use crate::videodata::Clip;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub targets: TargetConfig,
    /// Weight of the time-head loss.
    pub lambda: f64,
    pub loss_kind: LossKind,
    pub mask_ratio: f64,
    pub mask_strategy: MaskStrategy,
    /// Base of the batch-order stream.
    pub data_seed: u64,
    /// Base of the per-sample mask stream.
    pub mask_seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults with warmup at 5% of `total_steps`.
    pub fn with_steps(total_steps: u64) -> Self {
        TrainConfig {
            lr: 1.5e-4,
            betas: (0.9, 0.95),
            eps: 1e-8,
            weight_decay: 0.05,
            warmup_steps: total_steps / 20,
            total_steps,
            batch_size: 8,
            targets: TargetConfig::default(),
            lambda: 1.0,
            loss_kind: LossKind::Mse,
            mask_ratio: 0.9,
            mask_strategy: MaskStrategy::Random,
            data_seed: 1,
            mask_seed: 2,
        }
    }

    /// Fans a run seed out to the data (`seed + 1`) and mask (`seed + 2`)
    /// streams.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.data_seed = seed.wrapping_add(1);
        self.mask_seed = seed.wrapping_add(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::invalid("warmup_steps", "must not exceed total_steps"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and non-negative"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(Error::invalid("betas", "each beta must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("eps", "eps must be positive and weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid("mask.ratio", "must lie in [0, 1)"));
        }
        if self.targets.gap == 0 {
            return Err(Error::invalid("targets.gap", "must be at least 1"));
        }
        Ok(())
    }

    /// Errors unless the model carries exactly the heads the targets need.
    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if model.target_kind != self.targets.kind {
            return Err(Error::invalid(
                "targets.kind",
                format!("model built for `{}`, targets ask for `{}`", model.target_kind.name(), self.targets.kind.name()),
            ));
        }
        Ok(())
    }

    pub fn adamw<T: Scalar>(&self, lr: f64) -> AdamWParams<T> {
        AdamWParams {
            lr: T::from_f64(lr),
            beta1: T::from_f64(self.betas.0),
            beta2: T::from_f64(self.betas.1),
            eps: T::from_f64(self.eps),
            weight_decay: T::from_f64(self.weight_decay),
        }
    }

    /// Seed of the mask drawn for sample `j` of the batch at `step`.
    pub fn sample_mask_seed(&self, step: u64, j: usize) -> u64 {
        derive_seed(self.mask_seed, &[step, j as u64])
    }

    /// Dataset indices of the batch at `step`. Each epoch visits every
    /// sample once in a seeded order; the result depends only on
    /// `(seed, step)`, which makes resumed runs line up exactly.
    pub fn batch_indices(&self, step: u64, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::invalid("dataset", "no samples"));
        }
        let b = self.batch_size as u64;
        let n64 = n as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        let mut out = Vec::with_capacity(self.batch_size);
        for j in 0..b {
            let p = step * b + j;
            let epoch = p / n64;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng_from_seed(derive_seed(self.data_seed, &[epoch])));
                cached = Some((epoch, perm));
            }
            out.push(cached.as_ref().map(|c| c.1[(p % n64) as usize]).unwrap_or(0));
        }
        Ok(out)
    }
}

/// Parameters plus optimizer moments; `opt.t` counts completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub params: ModelState<T>,
    pub opt: OptimState<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ModelState<T>) -> Self {
        let opt = OptimState::zeros_like(params.tensors());
        TrainState { params, opt }
    }

    pub fn step(&self) -> u64 {
        self.opt.t
    }
}

/// Losses of one sample or the batch mean over samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub space: Option<f64>,
    pub time: Option<f64>,
}

/// Gradient of a single clip's combined masked loss.
pub fn pretrain_sample<T: Scalar>(
    model: &ModelConfig,
    params: &ModelState<T>,
    clip: &Clip,
    mask: &Mask,
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor<T>>, StepLoss)> {
    cfg.check_model(model)?;
    let targets = make_targets(clip, mask, &model.grid, &cfg.targets)?;
    let mut g = ModelGraph::new(model, params)?;
    let out = g.forward_pretrain(clip, mask)?;
    let mut head = |pred: Option<_>, target: &Option<Tensor<f32>>| -> Result<Option<_>> {
        match (pred, target) {
            (Some(p), Some(t)) => Ok(Some(masked_loss_var(&mut g.tape, p, &t.cast::<T>(), mask, cfg.loss_kind)?)),
            _ => Ok(None),
        }
    };
    let space = head(out.space, &targets.space)?;
    let time = head(out.time, &targets.time)?;
    let total = total_loss_var(&mut g.tape, space, time, cfg.lambda)?;
    let value = |v: Option<_>| v.map(|v| g.value(v).data()[0].as_f64());
    let loss = StepLoss { total: g.value(total).data()[0].as_f64(), space: value(space), time: value(time) };
    Ok((g.gradients(total)?, loss))
}

/// Masks for every sample of the batch at `step`.
pub fn pretrain_masks(model: &ModelConfig, cfg: &TrainConfig, step: u64, batch: usize) -> Result<Vec<Mask>> {
    (0..batch).map(|j| sample_mask(&model.grid, cfg.mask_ratio, cfg.mask_strategy, cfg.sample_mask_seed(step, j))).collect()
}

/// Mean of per-sample gradients and losses, summed in sample order.
pub fn mean_gradients<T: Scalar>(samples: Vec<(Vec<Tensor<T>>, StepLoss)>) -> Result<(Vec<Tensor<T>>, StepLoss)> {
    let b = samples.len();
    let mut it = samples.into_iter();
    let (mut acc, first) = it.next().ok_or_else(|| Error::invalid("batch", "no samples"))?;
    let (mut total, mut space, mut time) = (first.total, first.space, first.time);
    for (grads, loss) in it {
        if grads.len() != acc.len() {
            return Err(Error::shape("mean_gradients", format!("{} vs {} tensors", grads.len(), acc.len())));
        }
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x = *x + y);
        }
        total += loss.total;
        space = space.zip(loss.space).map(|(a, b)| a + b);
        time = time.zip(loss.time).map(|(a, b)| a + b);
    }
    let inv = T::from_usize(b);
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x = *x / inv);
    }
    let n = b as f64;
    Ok((acc, StepLoss { total: total / n, space: space.map(|s| s / n), time: time.map(|t| t / n) }))
}

/// One AdamW update at `lr_at(state.step())`.
pub fn apply_update<T: Scalar>(state: &mut TrainState<T>, grads: &[Tensor<T>], cfg: &TrainConfig) -> Result<()> {
    let step = state.step();
    if step >= cfg.total_steps {
        return Err(Error::invalid("step", format!("{step} reached total_steps {}", cfg.total_steps)));
    }
    let lr = lr_at(step, cfg.lr, cfg.warmup_steps, cfg.total_steps)?;
    let hp = cfg.adamw::<T>(lr);
    adamw_step(state.params.tensors_mut(), grads, &mut state.opt, &hp)
}

fn check_loss(step: u64, loss: &StepLoss) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, loss: loss.total })
    }
}

/// Sample a mask per clip, average the masked losses over the batch and take
/// one optimizer step. Returns the batch loss before the update.
pub fn pretrain_step<T: Scalar>(
    model: &ModelConfig,
    state: &mut TrainState<T>,
    clips: &[&Clip],
    cfg: &TrainConfig,
) -> Result<StepLoss> {
    let step = state.step();
    let masks = pretrain_masks(model, cfg, step, clips.len())?;
    let samples = clips
        .iter()
        .zip(&masks)
        .map(|(c, m)| pretrain_sample(model, &state.params, c, m, cfg))
        .collect::<Result<Vec<_>>>()?;
    let (grads, loss) = mean_gradients(samples)?;
    check_loss(step, &loss)?;
    apply_update(state, &grads, cfg)?;
    Ok(loss)
}

/// Cross-entropy gradient of a single labelled clip.
pub fn finetune_sample<T: Scalar>(
    model: &ModelConfig,
    params: &ModelState<T>,
    clip: &Clip,
    label: usize,
) -> Result<(Vec<Tensor<T>>, StepLoss)> {
    if label >= model.num_classes {
        return Err(Error::invalid("label", format!("{label} outside {} classes", model.num_classes)));
    }
    let mut g = ModelGraph::new(model, params)?;
    let logits = g.classify(clip)?;
    let loss = g.tape.cross_entropy(logits, &[label])?;
    let total = g.value(loss).data()[0].as_f64();
    Ok((g.gradients(loss)?, StepLoss { total, space: None, time: None }))
}

/// One supervised step over a labelled batch.
pub fn finetune_step<T: Scalar>(
    model: &ModelConfig,
    state: &mut TrainState<T>,
    clips: &[&Clip],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<StepLoss> {
    if clips.len() != labels.len() {
        return Err(Error::shape("finetune_step", format!("{} clips, {} labels", clips.len(), labels.len())));
    }
    let step = state.step();
    let samples = clips
        .iter()
        .zip(labels)
        .map(|(c, &l)| finetune_sample(model, &state.params, c, l))
        .collect::<Result<Vec<_>>>()?;
    let (grads, loss) = mean_gradients(samples)?;
    check_loss(step, &loss)?;
    apply_update(state, &grads, cfg)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, StateKind};
    use crate::targets::TargetKind;
    use crate::tokenizer::{CubeDims, TokenGrid};
    use crate::videodata::{generate_moving_square, ClipDims, SyntheticSpec};
    use alloc::vec;

    fn grid() -> TokenGrid {
        TokenGrid { t: 2, h: 2, w: 2, cube: CubeDims { t: 2, p: 4 }, channels: 1 }
    }

    fn clips(n: u64) -> Vec<Clip> {
        let dims = ClipDims::new(4, 8, 8, 1);
        (0..n).map(|s| generate_moving_square(&SyntheticSpec::random(dims, 1, s), dims, s).unwrap().0).collect()
    }

    fn cfg() -> TrainConfig {
        let mut c = TrainConfig::with_steps(20);
        c.batch_size = 2;
        c.mask_ratio = 0.5;
        c.lr = 1e-3;
        c
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let m = ModelConfig::from_preset(Preset::Tiny, grid(), TargetKind::Both, 4);
        let params = ModelState::<f64>::init(&m, StateKind::Pretrain, 1).unwrap();
        let c = cfg();
        let data = clips(2);
        let masks = pretrain_masks(&m, &c, 0, 2).unwrap();
        let a = pretrain_sample(&m, &params, &data[0], &masks[0], &c).unwrap();
        let b = pretrain_sample(&m, &params, &data[1], &masks[1], &c).unwrap();
        let (mean, loss) = mean_gradients(vec![a.clone(), b.clone()]).unwrap();
        assert!((loss.total - (a.1.total + b.1.total) / 2.0).abs() < 1e-15);
        for i in 0..mean.len() {
            for k in 0..mean[i].numel() {
                let want = (a.0[i].data()[k] + b.0[i].data()[k]) / 2.0;
                assert!((mean[i].data()[k] - want).abs() <= 1e-15 * want.abs().max(1.0));
            }
        }
        // against a direct two-sample objective on one tape
        let mut g = ModelGraph::new(&m, &params).unwrap();
        let mut terms = Vec::new();
        for (clip, mask) in data.iter().zip(&masks) {
            let t = make_targets(clip, mask, &m.grid, &c.targets).unwrap();
            let o = g.forward_pretrain(clip, mask).unwrap();
            let s = masked_loss_var(&mut g.tape, o.space.unwrap(), &t.space.unwrap().cast(), mask, c.loss_kind).unwrap();
            let tm = masked_loss_var(&mut g.tape, o.time.unwrap(), &t.time.unwrap().cast(), mask, c.loss_kind).unwrap();
            terms.push(total_loss_var(&mut g.tape, Some(s), Some(tm), 1.0).unwrap());
        }
        let sum = g.tape.add(terms[0], terms[1]).unwrap();
        let half = g.tape.scale(sum, 0.5).unwrap();
        let direct = g.gradients(half).unwrap();
        for (d, m) in direct.iter().zip(&mean) {
            assert!(d.max_abs_diff(m) < 1e-12);
        }
    }

    #[test]
    fn combined_loss_is_sum_of_heads() {
        let m = ModelConfig::from_preset(Preset::Tiny, grid(), TargetKind::Both, 4);
        let params = ModelState::<f64>::init(&m, StateKind::Pretrain, 1).unwrap();
        let c = cfg();
        let mask = pretrain_masks(&m, &c, 0, 1).unwrap().remove(0);
        let (_, l) = pretrain_sample(&m, &params, &clips(1)[0], &mask, &c).unwrap();
        assert_eq!(l.total, l.space.unwrap() + l.time.unwrap());
        let mut c0 = c;
        c0.lambda = 0.0;
        let (g0, l0) = pretrain_sample(&m, &params, &clips(1)[0], &mask, &c0).unwrap();
        assert_eq!(l0.total, l0.space.unwrap());
        let time_pos = params.names().iter().position(|n| n.starts_with("decoder.time")).unwrap();
        assert!(g0[time_pos].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steps_are_deterministic_and_reduce_loss() {
        let m = ModelConfig::from_preset(Preset::Tiny, grid(), TargetKind::Both, 4);
        let c = cfg();
        let data = clips(4);
        let run = || {
            let mut st = TrainState::new(ModelState::<f32>::init(&m, StateKind::Pretrain, 3).unwrap());
            let mut losses = Vec::new();
            for s in 0..c.total_steps {
                let idx = c.batch_indices(s, data.len()).unwrap();
                let batch: Vec<&Clip> = idx.iter().map(|&i| &data[i]).collect();
                losses.push(pretrain_step(&m, &mut st, &batch, &c).unwrap().total);
            }
            (losses, st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.step(), c.total_steps);
        let mut st = sa;
        let batch: Vec<&Clip> = data.iter().take(2).collect();
        assert!(pretrain_step(&m, &mut st, &batch, &c).is_err());
    }

    #[test]
    fn target_kind_mismatch_is_rejected() {
        let m = ModelConfig::from_preset(Preset::Tiny, grid(), TargetKind::Frame, 4);
        let params = ModelState::<f64>::init(&m, StateKind::Pretrain, 1).unwrap();
        let c = cfg();
        let mask = pretrain_masks(&m, &c, 0, 1).unwrap().remove(0);
        assert!(pretrain_sample(&m, &params, &clips(1)[0], &mask, &c).is_err());
    }

    #[test]
    fn batch_indices_cover_each_epoch() {
        let mut c = cfg();
        c.batch_size = 3;
        let mut seen: Vec<usize> = (0..4).flat_map(|s| c.batch_indices(s, 6).unwrap()).collect();
        assert_eq!(seen.len(), 12);
        let (first, second) = seen.split_at_mut(6);
        first.sort_unstable();
        second.sort_unstable();
        assert_eq!(first, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(second, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(c.batch_indices(7, 6).unwrap(), c.batch_indices(7, 6).unwrap());
    }

    #[test]
    fn finetune_uniform_logits_give_ln_classes() {
        let m = ModelConfig::from_preset(Preset::Tiny, grid(), TargetKind::Both, 4);
        let mut params = ModelState::<f64>::init(&m, StateKind::Finetune, 1).unwrap();
        params.get_mut("head.weight").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let (_, l) = finetune_sample(&m, &params, &clips(1)[0], 2).unwrap();
        assert!((l.total - 4f64.ln()).abs() < 1e-12);
        assert!(finetune_sample(&m, &params, &clips(1)[0], 4).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::with_steps(100).validate().is_ok());
        let mut c = TrainConfig::with_steps(100);
        c.warmup_steps = 101;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::with_steps(100);
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::with_steps(100);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
