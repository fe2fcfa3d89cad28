use mcn_core::codec::{encode_targets, EncodedTargets};
use mcn_core::losses::{
    focal_value_and_grad, masked_l1_value_and_grad, seg_ce_value_and_grad, total_loss, BatchTargets, L1Mask,
    LossBreakdown, LossWeights,
};
use mcn_core::model::{build_model, BackboneConfig, HeadConfig, HeadVars, Mode, NormKind, Task, TaskSet};
use mcn_core::synth::{generate_dataset, DatasetConfig};
use mcn_core::tensor::{Tape, Tensor};
use mcn_core::train::stack_images;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn tiny_setup(seed: u64) -> (HeadConfig, Vec<EncodedTargets>, Tensor<f64>, mcn_core::model::McnModel<f64>) {
    let heads = HeadConfig { num_classes: 2, num_keypoints: 3, seg_resolution: 8, head_width: 4, ..HeadConfig::default() };
    let backbone = BackboneConfig { stage_widths: vec![4, 4], stage_strides: vec![2, 2], block_depth: 1, norm: NormKind::Batch };
    let data = DatasetConfig { height: 16, width: 16, num_classes: 2, num_keypoints: 3, max_objects: 3, scenes: 2, no_collision: false, seed, ..DatasetConfig::default() };
    let scenes = generate_dataset(&data).unwrap();
    let enc = scenes.iter().map(|s| encode_targets(&s.annotation, &heads).unwrap()).collect();
    let images = stack_images(&scenes.iter().collect::<Vec<_>>()).unwrap();
    (heads.clone(), enc, images, build_model(&backbone, &heads, seed).unwrap())
}

fn loss_of(seed: u64, weights: &LossWeights, active: &TaskSet) -> LossBreakdown {
    let (_, enc, images, model) = tiny_setup(seed);
    let mut tape = Tape::new();
    let x = tape.leaf(&images);
    let (out, _) = model.forward(&mut tape, x, Mode::Train, active).unwrap();
    total_loss(&mut tape, &out, &BatchTargets::stack(&enc).unwrap(), weights, active).unwrap().1
}

#[test]
fn default_weights_are_exact() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_size, w.lambda_seg, w.lambda_joint), (0.1, 5.0, 1.0));
}

#[test]
fn equation_holds_for_hundred_random_breakdowns() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let w = LossWeights::default();
    for _ in 0..100 {
        let b = LossBreakdown {
            center: r.random_range(0.0..10.0),
            size: r.random_range(0.0..50.0),
            off: r.random_range(0.0..2.0),
            keyp: r.random_range(0.0..10.0),
            keyp_off: r.random_range(0.0..2.0),
            seg: r.random_range(0.0..3.0),
            ..LossBreakdown::default()
        };
        let hand = b.center + 0.1 * b.size + b.off + b.keyp + b.keyp_off + 5.0 * b.seg;
        assert!(rel(b.weighted_total(&w), hand) <= 1e-9);
    }
}

#[test]
fn recorded_total_matches_equation_on_real_networks() {
    let all: TaskSet = Task::ALL.into_iter().collect();
    let w = LossWeights::default();
    for seed in 0..20 {
        let b = loss_of(seed, &w, &all);
        let hand = b.center + 0.1 * b.size + b.off + b.keyp + b.keyp_off + 5.0 * b.seg;
        assert!(rel(b.total, hand) <= 1e-9, "seed {seed}: {} vs {hand}", b.total);
    }
}

#[test]
fn scaling_lambda_seg_scales_only_the_seg_contribution() {
    let all: TaskSet = Task::ALL.into_iter().collect();
    for c in [0.0, 0.5, 3.0] {
        let base = loss_of(4, &LossWeights::default(), &all);
        let scaled = loss_of(4, &LossWeights { lambda_seg: 5.0 * c, ..LossWeights::default() }, &all);
        let want = (c - 1.0) * 5.0 * base.seg;
        assert!(rel(scaled.total - base.total, want) <= 1e-9, "c = {c}");
    }
}

#[test]
fn detection_and_segmentation_without_pose() {
    let active: TaskSet = [Task::Detection, Task::Segmentation].into_iter().collect();
    let b = loss_of(2, &LossWeights::default(), &active);
    assert_eq!((b.keyp, b.keyp_off), (0.0, 0.0));
    assert!(!b.is_active(Task::Pose));
    assert!(rel(b.total, b.center + 0.1 * b.size + b.off + 5.0 * b.seg) <= 1e-9);
}

/// Heatmaps 1 exactly at peaks and 0 elsewhere, regressions equal to
/// their targets, one-hot segmentation.
fn perfect(t: &EncodedTargets) -> EncodedTargets {
    let mut p = t.clone();
    if let Some(d) = &mut p.detection {
        d.center.iter_mut().for_each(|v| *v = if *v == 1.0 { 1.0 } else { 0.0 });
    }
    if let Some(k) = &mut p.pose {
        k.heatmap.iter_mut().for_each(|v| *v = if *v == 1.0 { 1.0 } else { 0.0 });
    }
    p
}

#[test]
fn perfect_predictions_give_near_zero_terms() {
    let (_, enc, _, _) = tiny_setup(5);
    let all: TaskSet = Task::ALL.into_iter().collect();
    let mut tape = Tape::<f64>::new();
    let mut outs = Vec::new();
    for t in &enc {
        outs.push(perfect(t).as_outputs::<f64>());
    }
    let cat = |f: &dyn Fn(&mcn_core::model::HeadOutputs<f64>) -> &Option<Tensor<f64>>| {
        let parts: Vec<&Tensor<f64>> = outs.iter().map(|o| f(o).as_ref().unwrap()).collect();
        let mut shape = parts[0].shape().to_vec();
        shape[0] = parts.len();
        Tensor::new(shape, parts.iter().flat_map(|p| p.data().to_vec()).collect()).unwrap()
    };
    let mut leaf = |t: Tensor<f64>| Some(tape.leaf(&t));
    let vars = HeadVars {
        center_heatmap: leaf(cat(&|o| &o.center_heatmap)),
        size_map: leaf(cat(&|o| &o.size_map)),
        offset_map: leaf(cat(&|o| &o.offset_map)),
        keypoint_heatmap: leaf(cat(&|o| &o.keypoint_heatmap)),
        keypoint_offset: leaf(cat(&|o| &o.keypoint_offset)),
        joint_regression: leaf(cat(&|o| &o.joint_regression)),
        seg_softmax: leaf(cat(&|o| &o.seg_softmax)),
    };
    let (_, b) = total_loss(&mut tape, &vars, &BatchTargets::stack(&enc).unwrap(), &LossWeights::default(), &all).unwrap();
    for (name, v) in b.terms() {
        let bound = if name == "total" { 6e-4 } else { 1e-4 };
        assert!(v <= bound, "{name} = {v}");
    }
}

#[test]
fn missing_head_for_active_task_is_an_error() {
    let (_, enc, images, model) = tiny_setup(1);
    let det: TaskSet = [Task::Detection].into_iter().collect();
    let mut tape = Tape::new();
    let x = tape.leaf(&images);
    let (out, _) = model.forward(&mut tape, x, Mode::Train, &det).unwrap();
    let all: TaskSet = Task::ALL.into_iter().collect();
    assert!(total_loss(&mut tape, &out, &BatchTargets::stack(&enc).unwrap(), &LossWeights::default(), &all).is_err());
}

#[test]
fn seg_loss_falls_as_the_true_class_gains_mass() {
    let at = |p: f64| seg_ce_value_and_grad(&[1.0 - p, p], &[1], &[1, 2, 1, 1]).unwrap().0;
    assert!(at(0.1) > at(0.5) && at(0.5) > at(0.9));
}

proptest! {
    #[test]
    fn every_term_is_non_negative(
        pred in prop::collection::vec(0.0f64..1.0, 8),
        gt in prop::collection::vec(0.0f64..=1.0, 8),
        mask in prop::collection::vec(prop::bool::ANY, 4),
        ids in prop::collection::vec(0u16..2, 4),
    ) {
        prop_assert!(focal_value_and_grad(&pred, &gt).unwrap().0 >= 0.0);
        let m = L1Mask { values: mask.iter().map(|&b| b as u8 as f64).collect(), groups: 1 };
        prop_assert!(masked_l1_value_and_grad(&pred, &gt, &m, &[1, 2, 2, 2]).unwrap().0 >= 0.0);
        prop_assert!(seg_ce_value_and_grad(&pred, &ids, &[1, 2, 2, 2]).unwrap().0 >= 0.0);
    }
}
