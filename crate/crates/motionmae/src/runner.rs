//! Pretraining, finetuning, reconstruction and ablation runs over on-disk
//! datasets. Every run is a pure function of its config and inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use motionmae_core::evalviz::{build_recon_grid, multiview_logits, temporal_starts, topk_accuracy, ReconGrid};
use motionmae_core::model::{classify_values, ModelConfig, ModelGraph, ModelState, StateKind};
use motionmae_core::numerics::Tensor;
use motionmae_core::rng::derive_seed;
use motionmae_core::targets::make_targets;
use motionmae_core::tokenizer::{sample_mask, Mask};
use motionmae_core::training::{
    apply_update, finetune_sample, mean_gradients, pretrain_masks, pretrain_sample, StepLoss, TrainConfig, TrainState,
};
use motionmae_core::verify::{classifier_check, end_to_end_check, primitive_checks, CheckResult};
use motionmae_core::videodata::{crop_resize, hflip, random_resized_crop, sample_clip, Clip, CropWindow};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{parse_decoder_setting, DecoderSetting, RunConfig, StackSection};
use crate::dataset::{load_dataset, Dataset};
use crate::ppm::write_ppm;
use crate::{Error, Result};

pub const LOSS_CSV: &str = "loss.csv";
pub const LOSS_HEADER: &str = "step,loss,loss_space,loss_time";
pub const FINAL_CHECKPOINT: &str = "checkpoint.mmck";
pub const METRICS_JSON: &str = "metrics.json";
pub const THREADS_ENV: &str = "MOTIONMAE_THREADS";

/// Path tag separating augmentation seeds from the generator's `[split, i, 0|1]`.
const AUG_TAG: u64 = 2;

/// Worker count from `MOTIONMAE_THREADS`; unset means 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(format!("{THREADS_ENV}: expected a positive integer, got `{s}`"))),
        },
    }
}

/// Maps `f` over `0..n` on up to `threads` scoped workers. Results come back
/// in index order, so callers see the same sequence for any thread count.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let workers = threads.min(n);
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every index is mapped once")).collect()
}

/// Errors unless every clip has the configured channels and frame size
/// reachable, and enough frames for one clip.
pub fn check_dataset(cfg: &RunConfig, ds: &Dataset, classes: Option<usize>) -> Result<()> {
    let d = ds.clips[0].dims();
    let span = (cfg.data.clip_len - 1) * cfg.data.stride + 1;
    if d.c != cfg.data.channels || d.t < span {
        return Err(Error::config(format!(
            "dataset clips are {}x{}x{}x{}; config needs {} channels and at least {span} frames",
            d.t, d.h, d.w, d.c, cfg.data.channels
        )));
    }
    if let Some(k) = classes {
        if k < 2 {
            return Err(Error::config("model.num_classes must be at least 2"));
        }
        if let Some(i) = ds.labels.iter().position(|&l| l >= k) {
            return Err(Error::config(format!("label {} of clip `{}` exceeds model.num_classes {k}", ds.labels[i], ds.ids[i])));
        }
    }
    Ok(())
}

fn fit_frame(clip: &Clip, h: usize, w: usize) -> Result<Clip> {
    let d = clip.dims();
    if (d.h, d.w) == (h, w) {
        return Ok(clip.clone());
    }
    Ok(crop_resize(clip, CropWindow { top: 0, left: 0, height: d.h, width: d.w }, h, w)?)
}

/// Training view of `video`: seeded temporal start, then random resized crop
/// or a plain resize, then an optional seeded flip.
pub fn train_view(cfg: &RunConfig, video: &Clip, seed: u64) -> Result<Clip> {
    let d = &cfg.data;
    let span = (d.clip_len - 1) * d.stride + 1;
    let room = video.dims().t.saturating_sub(span) as u64;
    let start = (derive_seed(seed, &[0]) % (room + 1)) as usize;
    let clip = sample_clip(video, d.clip_len, d.stride, start)?;
    let mut clip = match d.crop_scale {
        Some([lo, hi]) => random_resized_crop(&clip, (lo, hi), d.height, d.width, derive_seed(seed, &[1]))?,
        None => fit_frame(&clip, d.height, d.width)?,
    };
    if d.flip && derive_seed(seed, &[2]) & 1 == 1 {
        clip = hflip(&clip);
    }
    Ok(clip)
}

/// Deterministic centred view used for reconstruction.
pub fn center_view(cfg: &RunConfig, video: &Clip) -> Result<Clip> {
    let d = &cfg.data;
    let start = temporal_starts(video.dims().t, d.clip_len, d.stride, 1)?[0];
    fit_frame(&sample_clip(video, d.clip_len, d.stride, start)?, d.height, d.width)
}

fn batch_views(cfg: &RunConfig, tc: &TrainConfig, ds: &Dataset, step: u64) -> Result<(Vec<Clip>, Vec<usize>)> {
    let idx = tc.batch_indices(step, ds.len())?;
    let clips = idx
        .iter()
        .enumerate()
        .map(|(j, &i)| train_view(cfg, &ds.clips[i], derive_seed(tc.data_seed, &[step, j as u64, AUG_TAG])))
        .collect::<Result<Vec<_>>>()?;
    Ok((clips, idx.iter().map(|&i| ds.labels[i]).collect()))
}

fn check_loss(step: u64, loss: &StepLoss) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(motionmae_core::Error::NonFiniteLoss { step, loss: loss.total }.into())
    }
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn loss_row(step: u64, loss: &StepLoss) -> String {
    format!("{step},{},{},{}", loss.total, csv_field(loss.space), csv_field(loss.time))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        let _ = writeln!(text, "{r}");
    }
    write_file(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Rows of an existing loss CSV whose step is below `before`.
fn earlier_rows(path: &Path, before: u64) -> Result<Vec<String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let step: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed { what: "loss.csv", detail: format!("bad row `{line}`") })?;
        if step < before {
            rows.push(line.to_string());
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Logged losses of the steps run by this call.
    pub losses: Vec<(u64, StepLoss)>,
    pub final_loss: f64,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
}

/// Pretrains on `ds`, writing `loss.csv`, periodic `checkpoint_<step>.mmck`
/// files and a final `checkpoint.mmck` under `out_dir`. With `resume`, the
/// run continues from the checkpoint's step and keeps earlier CSV rows.
pub fn run_pretrain(
    cfg: &RunConfig,
    ds: &Dataset,
    out_dir: &Path,
    resume: Option<Checkpoint>,
    threads: usize,
) -> Result<PretrainOutcome> {
    let model = cfg.model_config()?;
    let tc = cfg.train_config()?;
    check_dataset(cfg, ds, None)?;
    let mut state = match resume {
        Some(ck) => {
            ck.check(&model, StateKind::Pretrain)?;
            if ck.step() >= tc.total_steps {
                return Err(Error::config(format!("checkpoint is at step {}, nothing left of {}", ck.step(), tc.total_steps)));
            }
            ck.state
        }
        None => TrainState::new(ModelState::init(&model, StateKind::Pretrain, cfg.init_seed())?),
    };
    create_dir(out_dir)?;
    let csv = out_dir.join(LOSS_CSV);
    let mut rows = earlier_rows(&csv, state.step())?;
    let mut losses = Vec::new();
    let mut final_loss = f64::NAN;
    while state.step() < tc.total_steps {
        let step = state.step();
        let (clips, _) = batch_views(cfg, &tc, ds, step)?;
        let masks = pretrain_masks(&model, &tc, step, clips.len())?;
        let params = &state.params;
        let samples = parallel_map(clips.len(), threads, |j| {
            Ok(pretrain_sample(&model, params, &clips[j], &masks[j], &tc)?)
        })?;
        let (grads, loss) = mean_gradients(samples)?;
        check_loss(step, &loss)?;
        apply_update(&mut state, &grads, &tc)?;
        final_loss = loss.total;
        if step % cfg.train.log_interval == 0 {
            rows.push(loss_row(step, &loss));
            losses.push((step, loss));
        }
        let done = state.step();
        if cfg.train.checkpoint_interval.is_some_and(|k| done % k == 0) && done < tc.total_steps {
            save_checkpoint(&Checkpoint::new(&model, state.clone()), &out_dir.join(format!("checkpoint_{done:06}.mmck")))?;
            write_csv(&csv, LOSS_HEADER, &rows)?;
        }
    }
    let checkpoint = Checkpoint::new(&model, state);
    let checkpoint_path = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    write_csv(&csv, LOSS_HEADER, &rows)?;
    Ok(PretrainOutcome { losses, final_loss, checkpoint, checkpoint_path })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneReport {
    pub top1: f64,
    pub top5: f64,
    /// Number of evaluated clips.
    pub n: usize,
    pub train_top1: f64,
}

/// Logits of every clip: one forward pass when the clip already has the
/// model's dimensions, otherwise the multi-view average.
pub fn evaluate_logits(
    cfg: &RunConfig,
    model: &ModelConfig,
    params: &ModelState<f32>,
    ds: &Dataset,
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    let dims = model.grid.clip_dims();
    parallel_map(ds.len(), threads, |i| {
        let video = &ds.clips[i];
        Ok(if video.dims() == dims {
            classify_values(model, params, video)?
        } else {
            multiview_logits(model, params, video, cfg.data.stride, cfg.finetune.views)?
        })
    })
}

/// Encoder-plus-classifier parameters, with the encoder copied from `init`.
/// Decoder tensors of the checkpoint are ignored.
pub fn finetune_init(cfg: &RunConfig, model: &ModelConfig, init: Option<&Checkpoint>) -> Result<ModelState<f32>> {
    let mut params = ModelState::init(model, StateKind::Finetune, derive_seed(cfg.init_seed(), &[1]))?;
    if let Some(ck) = init {
        ck.check(model, StateKind::Pretrain)?;
        params.copy_prefix_from(&ck.state.params, "encoder.")?;
    }
    Ok(params)
}

/// Finetunes encoder and classifier on `train` and reports accuracy on `val`.
pub fn run_finetune(
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    init: Option<&Checkpoint>,
    threads: usize,
) -> Result<(FinetuneReport, ModelState<f32>)> {
    let model = cfg.model_config()?;
    let fc = cfg.finetune_config()?;
    check_dataset(cfg, train, Some(model.num_classes))?;
    check_dataset(cfg, val, Some(model.num_classes))?;
    let mut state = TrainState::new(finetune_init(cfg, &model, init)?);
    while state.step() < fc.total_steps {
        let step = state.step();
        let (clips, labels) = batch_views(cfg, &fc, train, step)?;
        let params = &state.params;
        let samples = parallel_map(clips.len(), threads, |j| Ok(finetune_sample(&model, params, &clips[j], labels[j])?))?;
        let (grads, loss) = mean_gradients(samples)?;
        check_loss(step, &loss)?;
        apply_update(&mut state, &grads, &fc)?;
    }
    let logits = evaluate_logits(cfg, &model, &state.params, val, threads)?;
    let train_logits = evaluate_logits(cfg, &model, &state.params, train, threads)?;
    let k5 = model.num_classes.min(5);
    let report = FinetuneReport {
        top1: topk_accuracy(&logits, &val.labels, 1)?,
        top5: topk_accuracy(&logits, &val.labels, k5)?,
        n: val.len(),
        train_top1: topk_accuracy(&train_logits, &train.labels, 1)?,
    };
    Ok((report, state.params))
}

pub fn write_report(report: &FinetuneReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(path, text.as_bytes())
}

/// Parameters for reconstruction: the checkpoint's, or a fresh init.
pub fn pretrain_params(cfg: &RunConfig, init: Option<&Checkpoint>) -> Result<ModelState<f32>> {
    let model = cfg.model_config()?;
    match init {
        Some(ck) => {
            ck.check(&model, StateKind::Pretrain)?;
            Ok(ck.state.params.clone())
        }
        None => Ok(ModelState::init(&model, StateKind::Pretrain, cfg.init_seed())?),
    }
}

/// The reconstruction mask for `ratio`, seeded from the mask seed and the ratio.
pub fn recon_mask(cfg: &RunConfig, model: &ModelConfig, ratio: f64) -> Result<Mask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!("--ratio: {ratio} outside [0, 1)")));
    }
    let tc = cfg.train_config()?;
    Ok(sample_mask(&model.grid, ratio, tc.mask_strategy, derive_seed(tc.mask_seed, &[u64::MAX, ratio.to_bits()]))?)
}

/// Input, masked input, space-head and time-head rows for one clip. With no
/// masked tokens the heads are not run and the reconstruction is the input.
pub fn reconstruct(cfg: &RunConfig, params: &ModelState<f32>, clip: &Clip, ratio: f64) -> Result<ReconGrid> {
    let model = cfg.model_config()?;
    let tc = cfg.train_config()?;
    let mask = recon_mask(cfg, &model, ratio)?;
    if mask.masked_count() == 0 {
        return Ok(build_recon_grid(clip, &mask, &model.grid, None, None, None)?);
    }
    let targets = make_targets(clip, &mask, &model.grid, &tc.targets)?;
    let mut g = ModelGraph::new(&model, params)?;
    let out = g.forward_pretrain(clip, &mask)?;
    let value = |v: Option<_>| -> Option<Tensor<f32>> { v.map(|v| g.value(v).clone()) };
    let (space, time) = (value(out.space), value(out.time));
    Ok(build_recon_grid(clip, &mask, &model.grid, space.as_ref(), time.as_ref(), targets.norm_stats.as_deref())?)
}

pub fn recon_file_name(ratio: f64) -> String {
    format!("recon_{ratio}.ppm")
}

/// One PPM per ratio for the centred view of `video`, in ratio order.
pub fn run_reconstruct(
    cfg: &RunConfig,
    init: Option<&Checkpoint>,
    video: &Clip,
    ratios: &[f64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if ratios.is_empty() {
        return Err(Error::config("--ratio: at least one ratio is required"));
    }
    let model = cfg.model_config()?;
    for &r in ratios {
        recon_mask(cfg, &model, r)?;
    }
    let params = pretrain_params(cfg, init)?;
    let clip = center_view(cfg, video)?;
    create_dir(out_dir)?;
    let mut paths = Vec::new();
    for &r in ratios {
        let grid = reconstruct(cfg, &params, &clip, r)?;
        let path = out_dir.join(recon_file_name(r));
        write_ppm(&grid.image, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Every primitive check and the end-to-end model check, in report order.
pub fn gradcheck_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut all = primitive_checks(seed)?;
    all.push(end_to_end_check(seed)?);
    all.push(classifier_check(seed)?);
    Ok(all)
}

/// Ablation axes and their settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    TargetKind,
    Gap,
    LossKind,
    Ratio,
    Decoder,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "target_kind" => Axis::TargetKind,
            "gap" => Axis::Gap,
            "loss_kind" => Axis::LossKind,
            "ratio" => Axis::Ratio,
            "decoder" => Axis::Decoder,
            _ => {
                return Err(Error::config(format!(
                    "--axis: unknown axis `{s}` (expected target_kind, gap, loss_kind, ratio or decoder)"
                )))
            }
        })
    }
}

/// `(label, config)` per swept setting. Gaps run smallest first.
pub fn ablation_settings(cfg: &RunConfig, axis: Axis) -> Result<Vec<(String, RunConfig)>> {
    let a = &cfg.ablate;
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    let out: Vec<(String, RunConfig)> = match axis {
        Axis::TargetKind => a.target_kind.iter().map(|k| (k.clone(), with(&|c| c.targets.kind = k.clone()))).collect(),
        Axis::Gap => {
            let mut gaps = a.gap.clone();
            gaps.sort_unstable();
            gaps.dedup();
            gaps.iter().map(|&g| (g.to_string(), with(&|c| c.targets.gap = g))).collect()
        }
        Axis::LossKind => a.loss_kind.iter().map(|k| (k.clone(), with(&|c| c.train.loss = k.clone()))).collect(),
        Axis::Ratio => a.ratio.iter().map(|&r| (r.to_string(), with(&|c| c.mask.ratio = r))).collect(),
        Axis::Decoder => {
            let base = cfg.model_config()?.decoder;
            a.decoder
                .iter()
                .map(|s| {
                    let c = match parse_decoder_setting("ablate.decoder", s)? {
                        DecoderSetting::Arch(arch) => with(&|c| c.model.arch = arch.name().into()),
                        DecoderSetting::Size { embed_dim, depth } => {
                            let heads = if embed_dim % base.heads == 0 { base.heads } else { 1 };
                            let stack = StackSection { depth, embed_dim, heads, mlp_ratio: base.mlp_ratio };
                            with(&|c| c.model.decoder = Some(stack))
                        }
                    };
                    Ok((s.clone(), c))
                })
                .collect::<Result<_>>()?
        }
    };
    if out.is_empty() {
        return Err(Error::config("ablate: the swept axis has no values"));
    }
    for (label, c) in &out {
        c.validate().map_err(|e| Error::config(format!("ablate setting `{label}`: {e}")))?;
    }
    Ok(out)
}

/// Pretrains then finetunes once per setting, sequentially, and writes
/// `ablate_<axis>.csv` with columns `setting,top1`.
pub fn run_ablation(
    cfg: &RunConfig,
    axis_name: &str,
    train: &Dataset,
    val: &Dataset,
    out_dir: &Path,
    threads: usize,
) -> Result<Vec<(String, f64)>> {
    let axis = Axis::parse(axis_name)?;
    let settings = ablation_settings(cfg, axis)?;
    let mut rows = Vec::with_capacity(settings.len());
    for (label, c) in &settings {
        let dir = out_dir.join(format!("ablate_{axis_name}")).join(label);
        let pre = run_pretrain(c, train, &dir, None, threads)?;
        let (report, _) = run_finetune(c, train, val, Some(&pre.checkpoint), threads)?;
        write_report(&report, &dir.join(METRICS_JSON))?;
        rows.push((label.clone(), report.top1));
    }
    let lines: Vec<String> = rows.iter().map(|(l, t)| format!("{l},{t}")).collect();
    write_csv(&out_dir.join(format!("ablate_{axis_name}.csv")), "setting,top1", &lines)?;
    Ok(rows)
}

/// The dataset named by `data.dataset_dir`.
pub fn load_train_set(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data.dataset_dir.as_ref().ok_or_else(|| Error::config("data.dataset_dir is required"))?;
    load_dataset(dir)
}

/// `data.val_dir` when set, else the training set.
pub fn load_val_set(cfg: &RunConfig, train: &Dataset) -> Result<Dataset> {
    match &cfg.data.val_dir {
        Some(dir) => load_dataset(dir),
        None => Ok(train.clone()),
    }
}

/// `none` or a checkpoint path.
pub fn load_init(arg: &str) -> Result<Option<Checkpoint>> {
    if arg == "none" {
        Ok(None)
    } else {
        load_checkpoint(Path::new(arg)).map(Some)
    }
}
