use motionmae_core::evalviz::topk_accuracy;
use motionmae_core::model::{classify_values, ModelConfig, ModelGraph, ModelState, Preset, StateKind};
use motionmae_core::rng::rng_from_seed;
use motionmae_core::targets::TargetKind;
use motionmae_core::tokenizer::{patchify, sample_mask, CubeDims, MaskStrategy, TokenGrid};
use motionmae_core::verify::{end_to_end_check, TOLERANCE};
use motionmae_core::videodata::{generate_moving_square, Clip, ClipDims, SyntheticSpec};
use rand::Rng as _;

fn grid() -> TokenGrid {
    TokenGrid { t: 2, h: 2, w: 2, cube: CubeDims { t: 2, p: 4 }, channels: 1 }
}

#[test]
fn end_to_end_gradients_match_central_differences() {
    let c = end_to_end_check(11).unwrap();
    assert!(c.report.max_rel_error < TOLERANCE, "{:?}", c.report);
    assert!(c.report.coordinates > 10_000);
}

#[test]
fn masked_pixels_never_reach_the_network() {
    let cfg = ModelConfig::from_preset(Preset::Tiny, grid(), TargetKind::Both, 4);
    let st = ModelState::<f32>::init(&cfg, StateKind::Pretrain, 3).unwrap();
    let dims = cfg.grid.clip_dims();
    let mut rng = rng_from_seed(5);
    for trial in 0..20u64 {
        let data: Vec<f32> = (0..dims.numel()).map(|_| rng.random_range(0.0..=1.0)).collect();
        let clip = Clip::new(dims, data).unwrap();
        let mask = sample_mask(&cfg.grid, 0.5, MaskStrategy::Random, trial).unwrap();
        let (mut tok, g) = patchify(&clip, cfg.grid.cube).unwrap();
        for i in mask.masked_indices() {
            let d = g.token_dim();
            tok.data_mut()[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        let other = motionmae_core::tokenizer::unpatchify(&tok, &g).unwrap();
        let run = |c: &Clip| {
            let mut gr = ModelGraph::new(&cfg, &st).unwrap();
            let o = gr.forward_pretrain(c, &mask).unwrap();
            (gr.value(o.space.unwrap()).clone(), gr.value(o.time.unwrap()).clone())
        };
        assert_eq!(run(&clip), run(&other));
    }
}

#[test]
fn untrained_classifier_is_at_chance() {
    let g = TokenGrid { t: 2, h: 2, w: 2, cube: CubeDims { t: 2, p: 4 }, channels: 1 };
    let cfg = ModelConfig::from_preset(Preset::Tiny, g, TargetKind::Both, 4);
    let dims = ClipDims::new(4, 8, 8, 1);
    let mut accs = Vec::new();
    for seed in 0..10u64 {
        let st = ModelState::<f32>::init(&cfg, StateKind::Finetune, 100 + seed).unwrap();
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100u64 {
            let s = seed * 1000 + i;
            let (clip, label) = generate_moving_square(&SyntheticSpec::random(dims, 1, s), dims, s).unwrap();
            logits.push(classify_values(&cfg, &st, &clip).unwrap());
            labels.push(label.index());
        }
        accs.push(topk_accuracy(&logits, &labels, 1).unwrap());
    }
    // a random head favours one class; averaged over heads, accuracy is 1/4
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.04, "mean accuracy {mean}, per head {accs:?}");
}
