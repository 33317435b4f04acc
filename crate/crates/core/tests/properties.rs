//! Invariants over random inputs.

use proptest::prelude::*;

use csdit_core::attention::{count_flops, AttentionMask, AttentionMode, TokenLayout};
use csdit_core::dataprep::{psnr, ssim, Image};
use csdit_core::pipeline::{gaussian_latent, patchify, unpatchify, NoiseSchedule};
use csdit_core::posenc::{assemble_references, partition_layout, Quadrant, RefSet};
use csdit_core::Precision;

fn layout() -> impl Strategy<Value = TokenLayout> {
    (1usize..300, 1usize..80, 0usize..40).prop_map(|(a, b, n)| TokenLayout::new(a, b, n).unwrap())
}

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |v| Image::new(h, w, v).unwrap())
}

proptest! {
    #[test]
    fn cost_ordering_and_single_step_agreement(l in layout(), steps in 1u64..50) {
        let f = count_flops(&l, AttentionMode::Full, steps).unwrap();
        let s = count_flops(&l, AttentionMode::Sparse, steps).unwrap();
        let c = count_flops(&l, AttentionMode::CausalSparse, steps).unwrap();
        prop_assert!(f.total >= s.total && s.total >= c.total);
        prop_assert_eq!(f.noise_self, c.noise_self);
        if l.n_refs() >= 2 {
            prop_assert!(f.total > s.total);
        }
        if l.n_refs() >= 1 && steps >= 2 {
            prop_assert!(s.total > c.total);
        }
    }

    #[test]
    fn flops_scale_with_steps_except_cached_references(l in layout(), steps in 1u64..50) {
        for mode in AttentionMode::ALL {
            let one = count_flops(&l, mode, 1).unwrap();
            let many = count_flops(&l, mode, steps).unwrap();
            prop_assert_eq!(many.noise_self, steps * one.noise_self);
            prop_assert_eq!(many.noise_ref, steps * one.noise_ref);
            let ref_steps = if mode == AttentionMode::CausalSparse { 1 } else { steps };
            prop_assert_eq!(many.ref_self, ref_steps * one.ref_self);
        }
    }

    #[test]
    fn causal_mask_keeps_references_isolated(l in layout()) {
        let m = AttentionMask::new(l, AttentionMode::CausalSparse);
        let c = m.pair_counts();
        prop_assert_eq!(c.reference_queries, (l.n_refs() * l.ref_len() * l.ref_len()) as u128);
        prop_assert_eq!(c.noise_queries, (l.noise_len() * l.total_len()) as u128);
    }

    #[test]
    fn quadrant_regions_tile_the_canvas(h in 1usize..20, w in 1usize..20) {
        let (h, w) = (2 * h, 2 * w);
        let l = partition_layout(4, h, w).unwrap();
        let total = l.central().cells() + Quadrant::ALL.iter().map(|&q| l.local(q).cells()).sum::<usize>();
        prop_assert_eq!(total, 2 * h * w);
        prop_assert_eq!(l.reference_tokens() * 4, l.noise_tokens());
    }

    #[test]
    fn assembled_references_are_distinct(members in prop::collection::vec(prop::collection::vec(0usize..12, 1..5), 4)) {
        let sets: Vec<RefSet> = members
            .iter()
            .zip(Quadrant::ALL)
            .map(|(m, q)| {
                let mut m = m.clone();
                m.dedup();
                let mut seen = std::collections::HashSet::new();
                m.retain(|x| seen.insert(*x));
                RefSet::new(q, m.clone(), m.len()).unwrap()
            })
            .collect();
        let out = assemble_references(&sets);
        let mut idx: Vec<usize> = out.iter().map(|r| r.0).collect();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), out.len());
        // first quadrant in order wins
        for (i, q) in &out {
            let first = sets.iter().find(|s| s.members.contains(i)).unwrap().quadrant;
            prop_assert_eq!(*q, first);
        }
    }

    #[test]
    fn patchify_round_trips(c in 1usize..4, hp in 1usize..5, wp in 1usize..5, p in 1usize..4, seed in any::<u64>()) {
        let z = gaussian_latent(vec![c, hp * p, wp * p], seed, Precision::F64);
        let tokens = patchify(&z, p).unwrap();
        prop_assert_eq!(tokens.shape(), &[hp * wp, c * p * p][..]);
        let back = unpatchify(&tokens, c, hp * p, wp * p, p).unwrap();
        prop_assert_eq!(back.max_abs_diff(&z).unwrap(), 0.0);
    }

    #[test]
    fn alpha_bar_decreases(t in 1usize..1000) {
        let s = NoiseSchedule::default();
        prop_assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
    }

    #[test]
    fn metrics_are_symmetric((a, b) in (image(12, 13), image(12, 13))) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }
}
