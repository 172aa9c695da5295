//! Generator self-audits over large batches.

use ivfx_core::synth::{
    general_triplet, generate_general, generate_vfx, mask_violations, max_effect_displacement, EditKind, GeneralEdit, SynthConfig, EFFECTS,
};

#[test]
fn thousand_general_triplets_change_only_inside_masks() {
    let cfg = SynthConfig::default();
    let set = generate_general(2024, 1000, &cfg).unwrap();
    let mut kinds = std::collections::BTreeSet::new();
    for (i, t) in set.iter().enumerate() {
        assert_eq!(mask_violations(t), 0, "triplet {i}: {}", t.instruction);
        if let EditKind::General(k) = t.kind {
            kinds.insert(format!("{k:?}"));
        }
    }
    assert_eq!(kinds.len(), 6, "every edit kind should appear in 1000 draws: {kinds:?}");
}

#[test]
fn shape_swaps_always_terminate_and_change_the_shape() {
    // seeds whose sprites crowd a color used to loop forever looking for
    // an unused shape
    let cfg = SynthConfig::default();
    let mut swaps = 0;
    for seed in 0..3000u64 {
        let t = general_triplet(seed, &cfg);
        if t.kind == EditKind::General(GeneralEdit::SwapShape) {
            swaps += 1;
            assert_ne!(t.source, t.target, "seed {seed}");
            assert_eq!(mask_violations(&t), 0, "seed {seed}");
        }
    }
    assert!(swaps > 100);
}

#[test]
fn effect_regions_move_coherently() {
    let cfg = SynthConfig::default();
    for e in EFFECTS {
        for t in generate_vfx(77, e, 16, &cfg).unwrap() {
            let (d, f) = max_effect_displacement(&t);
            assert!(d <= cfg.max_effect_speed, "{e:?}: centroid jumps {d:.2} px at frame {f}");
        }
    }
}
