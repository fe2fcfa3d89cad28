use mcn_core::checks::codec_roundtrip;
use mcn_core::codec::{
    decode_detections, encode_targets, gaussian_radius, render_gaussian, BoxAnnotation, DecodeParams, SceneAnnotation,
    MIN_OVERLAP,
};
use mcn_core::model::HeadConfig;
use mcn_core::synth::{generate_scene, DatasetConfig};
use proptest::prelude::*;

#[test]
fn hundred_collision_free_scenes_roundtrip() {
    let boxes = codec_roundtrip(100, 0).unwrap().unwrap();
    assert!(boxes >= 100, "only {boxes} boxes");
}

#[test]
fn roundtrip_holds_for_other_seeds() {
    for seed in 1..4 {
        codec_roundtrip(30, seed).unwrap().unwrap();
    }
}

#[test]
fn encode_rejects_unknown_class() {
    let mut ann = SceneAnnotation::empty(32, 32);
    ann.boxes.push(BoxAnnotation { class: 7, cx: 10.0, cy: 10.0, w: 4.0, h: 4.0 });
    ann.seg_map = vec![0; 32 * 32];
    assert!(encode_targets(&ann, &HeadConfig { seg_resolution: 32, ..HeadConfig::default() }).is_err());
}

#[test]
fn overlapping_scenes_count_collisions() {
    // Without the no-collision flag some same-class centers share a cell.
    let cfg = DatasetConfig { no_collision: false, max_objects: 4, height: 32, width: 32, scenes: 300, ..DatasetConfig::default() };
    let heads = HeadConfig { seg_resolution: 32, ..HeadConfig::default() };
    let total: usize = (0..cfg.scenes)
        .map(|i| encode_targets(&generate_scene(&cfg, i).unwrap().annotation, &heads).unwrap().collisions)
        .sum();
    assert!(total > 0);
}

#[test]
fn decoding_targets_is_idempotent_across_calls() {
    let cfg = DatasetConfig::default();
    let heads = HeadConfig { seg_resolution: 16, ..HeadConfig::default() };
    let enc = encode_targets(&generate_scene(&cfg, 3).unwrap().annotation, &heads).unwrap();
    let out = enc.as_outputs::<f32>();
    let p = DecodeParams::default();
    assert_eq!(decode_detections(&out, 0, &p, 4).unwrap(), decode_detections(&out, 0, &p, 4).unwrap());
}

proptest! {
    #[test]
    fn radius_is_monotone_in_box_size(h in 1.0f64..200.0, w in 1.0f64..200.0, grow in 0.0f64..50.0) {
        let a = gaussian_radius(h, w, MIN_OVERLAP).unwrap();
        prop_assert!(a >= 1);
        prop_assert!(gaussian_radius(h + grow, w, MIN_OVERLAP).unwrap() >= a);
        prop_assert!(gaussian_radius(h, w + grow, MIN_OVERLAP).unwrap() >= a);
    }

    #[test]
    fn rendered_heatmap_stays_in_unit_range_with_exact_peak(
        cx in 0usize..12, cy in 0usize..12, r in 1usize..6,
    ) {
        let mut m = vec![0.0; 12 * 12];
        render_gaussian(&mut m, 12, 12, cx, cy, r);
        prop_assert_eq!(m[cy * 12 + cx], 1.0);
        prop_assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
