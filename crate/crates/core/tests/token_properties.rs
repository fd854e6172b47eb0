//! Tokenizer, masking and target invariants over random shapes and contents.

use motionmae_core::targets::{make_motion_target, make_space_target};
use motionmae_core::tokenizer::{
    patchify, sample_mask, split_visible, unpatchify, unpatchify_motion, CubeDims, Mask, MaskStrategy, TokenGrid,
};
use motionmae_core::videodata::{hflip, Clip, ClipDims};
use proptest::prelude::*;

/// A clip whose sides are whole multiples of the cube, with arbitrary values.
/// At least 2 time slots and 4 spatial cells, so every ratio in use masks a token.
fn clip_and_cube() -> impl Strategy<Value = (Clip, CubeDims)> {
    (1usize..=2, 1usize..=3, 2usize..=3, 2usize..=3, 2usize..=3, 1usize..=2)
        .prop_flat_map(|(ct, p, nt, nh, nw, c)| {
            let dims = ClipDims::new(ct * nt, p * nh, p * nw, c);
            let n = dims.t * dims.h * dims.w * dims.c;
            (proptest::collection::vec(0.0f32..1.0, n), Just(dims), Just(CubeDims { t: ct, p }))
        })
        .prop_map(|(data, dims, cube)| (Clip::new(dims, data).unwrap(), cube))
}

fn strategy() -> impl Strategy<Value = MaskStrategy> {
    prop_oneof![Just(MaskStrategy::Random), Just(MaskStrategy::Tube), Just(MaskStrategy::TimeOnly)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn patchify_round_trips_exactly((clip, cube) in clip_and_cube()) {
        let (tokens, grid) = patchify(&clip, cube).unwrap();
        prop_assert_eq!(tokens.rows(), grid.num_tokens());
        prop_assert_eq!(tokens.cols(), grid.token_dim());
        prop_assert_eq!(unpatchify(&tokens, &grid).unwrap(), clip);
    }

    #[test]
    fn masks_are_deterministic_and_keep_a_token(
        (clip, cube) in clip_and_cube(),
        ratio in 0.0f64..0.99,
        s in strategy(),
        seed in any::<u64>(),
    ) {
        let grid = TokenGrid::for_clip(clip.dims(), cube).unwrap();
        let m = sample_mask(&grid, ratio, s, seed).unwrap();
        prop_assert_eq!(&m, &sample_mask(&grid, ratio, s, seed).unwrap());
        prop_assert_eq!(m.len(), grid.num_tokens());
        prop_assert!(m.masked_count() < m.len());
        if s == MaskStrategy::Random {
            prop_assert_eq!(m.masked_count(), (ratio * m.len() as f64).floor() as usize);
        }
    }

    #[test]
    fn visible_split_partitions_the_tokens((clip, cube) in clip_and_cube(), ratio in 0.0f64..0.99, seed in any::<u64>()) {
        let (tokens, grid) = patchify(&clip, cube).unwrap();
        let m = sample_mask(&grid, ratio, MaskStrategy::Random, seed).unwrap();
        let (vis, vis_idx, masked_idx) = split_visible(&tokens, &m).unwrap();
        prop_assert_eq!(vis.rows(), vis_idx.len());
        prop_assert_eq!(vis_idx.len() + masked_idx.len(), grid.num_tokens());
        for (r, &i) in vis_idx.iter().enumerate() {
            prop_assert!(!m.bits[i]);
            prop_assert_eq!(vis.row(r), tokens.row(i));
        }
    }

    #[test]
    fn targets_cover_exactly_the_masked_tokens(
        (clip, cube) in clip_and_cube(),
        ratio in 0.3f64..0.99,
        gap in 1usize..4,
        seed in any::<u64>(),
    ) {
        let gap = 1 + (gap - 1) % (clip.dims().t - 1);
        let grid = TokenGrid::for_clip(clip.dims(), cube).unwrap();
        let m = sample_mask(&grid, ratio, MaskStrategy::Random, seed).unwrap();
        let (space, _) = make_space_target(&clip, &m, &grid, false).unwrap();
        let motion = make_motion_target(&clip, &m, &grid, gap).unwrap();
        prop_assert_eq!(space.rows(), m.masked_count());
        prop_assert_eq!(motion.rows(), m.masked_count());
        prop_assert_eq!(motion.cols(), grid.motion_dim());
        prop_assert!(motion.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn normalized_space_targets_are_standardized((clip, cube) in clip_and_cube(), seed in any::<u64>()) {
        let grid = TokenGrid::for_clip(clip.dims(), cube).unwrap();
        let m = sample_mask(&grid, 0.5, MaskStrategy::Random, seed).unwrap();
        let (rows, stats) = make_space_target(&clip, &m, &grid, true).unwrap();
        prop_assert_eq!(stats.unwrap().len(), rows.rows());
        for r in 0..rows.rows() {
            let row = rows.row(r);
            let n = row.len() as f64;
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-5);
            // a constant patch standardizes to zeros, anything else to unit variance
            prop_assert!(var < 1e-6 || (var - 1.0).abs() < 1e-4, "variance {}", var);
        }
    }

    #[test]
    fn motion_target_commutes_with_hflip((clip, cube) in clip_and_cube(), gap in 1usize..4) {
        let gap = 1 + (gap - 1) % (clip.dims().t - 1);
        let grid = TokenGrid::for_clip(clip.dims(), cube).unwrap();
        let all = Mask::from_bits(vec![true; grid.num_tokens()]);
        let of_flip = make_motion_target(&hflip(&clip), &all, &grid, gap).unwrap();
        let plain = make_motion_target(&clip, &all, &grid, gap).unwrap();
        let back = unpatchify_motion(&of_flip, &grid).unwrap();
        let want = unpatchify_motion(&plain, &grid).unwrap();
        // unpatchified motion maps are per-slot frames; flip them back row by row
        let (w, c) = (clip.dims().w, clip.dims().c);
        let flipped: Vec<f32> = want
            .chunks(w * c)
            .flat_map(|row| row.chunks(c).rev().flatten().copied().collect::<Vec<_>>())
            .collect();
        prop_assert_eq!(back, flipped);
    }
}
