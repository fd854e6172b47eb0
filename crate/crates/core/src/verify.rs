//! Gradient checks of every tape primitive and of the end-to-end masked
//! objective at a tiny model size, in double precision.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::model::{DecoderArch, DecoderConfig, EncoderConfig, ModelConfig, ModelGraph, ModelState, StateKind};
use crate::numerics::{compare_with_central_differences, finite_diff_check, GradCheckReport, Tape, Tensor, Var};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::targets::{make_targets, TargetConfig, TargetKind};
use crate::tokenizer::{sample_mask, CubeDims, MaskStrategy, TokenGrid};
use crate::training::{masked_loss_var, total_loss_var, LossKind};
use crate::videodata::{Clip, ClipDims};
use crate::Result;

/// Finite-difference step used by the suite.
pub const EPS: f64 = 3e-4;
/// Upper bound of the random clip values in the end-to-end check. Small
/// targets keep the objective small, which keeps rounding noise in the
/// difference quotients far below the `1e-8` floor.
const CLIP_MAX: f32 = 0.1;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values kept at least `gap` away from each of `kinks`.
fn away_from(rng: &mut Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(-2.0..2.0);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

type Objective = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Reduces any tensor to a scalar through a fixed random projection so that
/// every output element carries a distinct weight.
fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let mut rng = rng_from_seed(0x5eed ^ shape.iter().product::<usize>() as u64);
    let w = t.constant(uniform(&mut rng, &shape, -1.0, 1.0))?;
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn primitive_cases(seed: u64) -> Vec<(&'static str, Objective, Vec<Tensor<f64>>)> {
    let mut r = rng_from_seed(seed);
    let r = &mut r;
    vec![
        ("matmul", |t, v| { let y = t.matmul(v[0], v[1])?; project(t, y) }, vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)]),
        ("transpose", |t, v| { let y = t.transpose(v[0])?; project(t, y) }, vec![uniform(r, &[3, 5], -1.0, 1.0)]),
        ("add", |t, v| { let y = t.add(v[0], v[1])?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
        ("sub", |t, v| { let y = t.sub(v[0], v[1])?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
        ("mul", |t, v| { let y = t.mul(v[0], v[1])?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
        ("add_row", |t, v| { let y = t.add_row(v[0], v[1])?; project(t, y) }, vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)]),
        ("scale", |t, v| { let y = t.scale(v[0], -1.7)?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0)]),
        ("softmax_rows", |t, v| { let y = t.softmax(v[0], 1)?; project(t, y) }, vec![uniform(r, &[3, 4], -2.0, 2.0)]),
        ("softmax_cols", |t, v| { let y = t.softmax(v[0], 0)?; project(t, y) }, vec![uniform(r, &[3, 4], -2.0, 2.0)]),
        (
            "layer_norm",
            |t, v| { let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?; project(t, y) },
            vec![uniform(r, &[3, 5], -2.0, 2.0), uniform(r, &[5], 0.5, 1.5), uniform(r, &[5], -0.5, 0.5)],
        ),
        ("gelu", |t, v| { let y = t.gelu(v[0])?; project(t, y) }, vec![uniform(r, &[2, 4], -3.0, 3.0)]),
        ("square", |t, v| { let y = t.square(v[0])?; project(t, y) }, vec![uniform(r, &[2, 4], -2.0, 2.0)]),
        ("abs", |t, v| { let y = t.abs(v[0])?; project(t, y) }, vec![away_from(r, &[2, 4], &[0.0], 0.05)]),
        ("smooth_l1", |t, v| { let y = t.smooth_l1(v[0])?; project(t, y) }, vec![away_from(r, &[2, 4], &[-1.0, 1.0], 0.05)]),
        ("gather_rows", |t, v| { let y = t.gather_rows(v[0], &[2, 0, 2, 1])?; project(t, y) }, vec![uniform(r, &[3, 2], -1.0, 1.0)]),
        ("concat_rows", |t, v| { let y = t.concat_rows(&[v[0], v[1]])?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1, 3], -1.0, 1.0)]),
        ("slice_cols", |t, v| { let y = t.slice_cols(v[0], 1, 2)?; project(t, y) }, vec![uniform(r, &[3, 4], -1.0, 1.0)]),
        ("concat_cols", |t, v| { let y = t.concat_cols(&[v[0], v[1]])?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 1], -1.0, 1.0)]),
        ("mean_rows", |t, v| { let y = t.mean_rows(v[0])?; project(t, y) }, vec![uniform(r, &[4, 3], -1.0, 1.0)]),
        ("sum", |t, v| { let y = t.square(v[0])?; t.sum(y) }, vec![uniform(r, &[2, 3], -1.0, 1.0)]),
        ("mean", |t, v| { let y = t.square(v[0])?; t.mean(y) }, vec![uniform(r, &[2, 3], -1.0, 1.0)]),
        ("cross_entropy", |t, v| t.cross_entropy(v[0], &[1, 0, 3]), vec![uniform(r, &[3, 4], -2.0, 2.0)]),
        ("reshape", |t, v| { let y = t.reshape(v[0], &[3, 2])?; project(t, y) }, vec![uniform(r, &[2, 3], -1.0, 1.0)]),
    ]
}

/// One finite-difference check per tape primitive, at random inputs drawn
/// from `seed`.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, f, params)| {
            Ok(CheckResult { name: String::from(name), report: finite_diff_check(f, &params, EPS)? })
        })
        .collect()
}

/// Encoder depth 2 at width 16 on a 2×2×2 token grid, with both heads.
pub fn tiny_check_config() -> ModelConfig {
    let grid = TokenGrid { t: 2, h: 2, w: 2, cube: CubeDims { t: 1, p: 2 }, channels: 1 };
    ModelConfig {
        grid,
        encoder: EncoderConfig { depth: 2, embed_dim: 16, heads: 2, mlp_ratio: 4 },
        decoder: DecoderConfig { depth: 1, embed_dim: 16, heads: 2, mlp_ratio: 4, arch: DecoderArch::Parallel },
        target_kind: TargetKind::Both,
        num_classes: 4,
    }
}

fn masked_objective<'a>(
    cfg: &'a ModelConfig,
    state: &'a ModelState<f64>,
    clip: &Clip,
    mask: &crate::tokenizer::Mask,
    space_target: &Option<Tensor<f64>>,
    time_target: &Option<Tensor<f64>>,
) -> Result<(ModelGraph<'a, f64>, Var)> {
    let mut g = ModelGraph::new(cfg, state)?;
    let out = g.forward_pretrain(clip, mask)?;
    let mut head = |pred: Option<Var>, target: &Option<Tensor<f64>>| match (pred, target) {
        (Some(p), Some(t)) => masked_loss_var(&mut g.tape, p, t, mask, LossKind::Mse).map(Some),
        _ => Ok(None),
    };
    let s = head(out.space, space_target)?;
    let t = head(out.time, time_target)?;
    let total = total_loss_var(&mut g.tape, s, t, 1.0)?;
    Ok((g, total))
}

/// Central-difference check of every parameter of the masked objective
/// `L_space + L_time` through the whole model.
pub fn end_to_end_check(seed: u64) -> Result<CheckResult> {
    let cfg = tiny_check_config();
    let mut params = ModelState::<f64>::init(&cfg, StateKind::Pretrain, derive_seed(seed, &[1]))?;
    // move away from the zero biases and unit gains of the init
    let mut rng = rng_from_seed(derive_seed(seed, &[2]));
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let dims: ClipDims = cfg.grid.clip_dims();
    let clip = Clip::new(dims, (0..dims.numel()).map(|_| rng.random_range(0.0f32..=CLIP_MAX)).collect())?;
    let mask = sample_mask(&cfg.grid, 0.5, MaskStrategy::Random, derive_seed(seed, &[3]))?;
    let targets = make_targets(&clip, &mask, &cfg.grid, &TargetConfig::default())?;
    let (ts, tt) = (targets.space.map(|t| t.cast::<f64>()), targets.time.map(|t| t.cast::<f64>()));

    let analytic = {
        let (g, total) = masked_objective(&cfg, &params, &clip, &mask, &ts, &tt)?;
        g.gradients(total)?
    };
    let names = params.names().to_vec();
    let report = compare_with_central_differences(&analytic, params.tensors(), EPS, |probe| {
        let st = ModelState::from_named(names.iter().cloned().zip(probe.iter().cloned()).collect())?;
        let (g, total) = masked_objective(&cfg, &st, &clip, &mask, &ts, &tt)?;
        Ok(g.value(total).data()[0])
    })?;
    Ok(CheckResult { name: String::from("end_to_end_masked_objective"), report })
}

/// Central-difference check of the classifier's cross-entropy through the
/// full encoder, mean pooling and linear head.
pub fn classifier_check(seed: u64) -> Result<CheckResult> {
    let cfg = tiny_check_config();
    let mut params = ModelState::<f64>::init(&cfg, StateKind::Finetune, derive_seed(seed, &[4]))?;
    let mut rng = rng_from_seed(derive_seed(seed, &[5]));
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let dims: ClipDims = cfg.grid.clip_dims();
    let clip = Clip::new(dims, (0..dims.numel()).map(|_| rng.random_range(0.0f32..=1.0)).collect())?;
    let label = rng.random_range(0..cfg.num_classes);
    let objective = |st: &ModelState<f64>| -> Result<(Vec<Tensor<f64>>, f64)> {
        let mut g = ModelGraph::new(&cfg, st)?;
        let logits = g.classify(&clip)?;
        let loss = g.tape.cross_entropy(logits, &[label])?;
        let value = g.value(loss).data()[0];
        Ok((g.gradients(loss)?, value))
    };
    let (analytic, _) = objective(&params)?;
    let names = params.names().to_vec();
    let report = compare_with_central_differences(&analytic, params.tensors(), EPS, |probe| {
        let st = ModelState::from_named(names.iter().cloned().zip(probe.iter().cloned()).collect())?;
        Ok(objective(&st)?.1)
    })?;
    Ok(CheckResult { name: String::from("end_to_end_classifier"), report })
}
