use mcn_core::model::{build_model, BackboneConfig, HeadConfig, McnModel, NormKind, Task, TaskSet};
use mcn_core::synth::{generate_dataset, DatasetConfig, Scene};
use mcn_core::train::{evaluate, train, EvalConfig, Optimizer, TrainConfig};
use mcn_core::Error;

fn scenes(n: usize, seed: u64) -> Vec<Scene> {
    generate_dataset(&DatasetConfig { height: 32, width: 32, scenes: n, seed, max_objects: 3, ..DatasetConfig::default() }).unwrap()
}

fn small_model(seed: u64) -> McnModel<f32> {
    let b = BackboneConfig { stage_widths: vec![8, 8], stage_strides: vec![2, 2], block_depth: 1, norm: NormKind::Batch };
    let h = HeadConfig { seg_resolution: 16, head_width: 8, ..HeadConfig::default() };
    build_model(&b, &h, seed).unwrap()
}

fn snapshot(m: &McnModel<f32>) -> Vec<(String, Vec<u32>)> {
    m.params().iter().map(|(k, t)| (k.clone(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

fn quiet(steps: usize) -> (EvalConfig, TrainConfig) {
    (EvalConfig { iou_thresholds: vec![0.5], ..EvalConfig::default() }, TrainConfig { steps, ..TrainConfig::default() })
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let data = scenes(4, 1);
    for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
        let mut m = small_model(0);
        let before = snapshot(&m);
        let (ev, cfg) = quiet(1);
        train(&mut m, &data, &TrainConfig { lr: 0.0, optimizer, ..cfg }, &ev, |_| Ok(())).unwrap();
        assert_eq!(snapshot(&m), before);
    }
}

#[test]
fn identical_seeds_give_identical_logs_and_weights() {
    let data = scenes(6, 2);
    let (ev, cfg) = quiet(8);
    let cfg = TrainConfig { batch_size: 3, flip: true, seed: 5, ..cfg };
    let run = || {
        let mut m = small_model(1);
        let log = train(&mut m, &data, &cfg, &ev, |_| Ok(())).unwrap();
        (log, snapshot(&m))
    };
    assert_eq!(run(), run());
}

#[test]
fn inactive_heads_stay_frozen_while_the_backbone_moves() {
    let data = scenes(4, 3);
    for frozen in Task::ALL {
        let active: TaskSet = match frozen {
            Task::Detection => [Task::Segmentation, Task::Pose].into_iter().collect(),
            t => Task::ALL.into_iter().filter(|&x| x != t).collect(),
        };
        let mut m = small_model(2);
        let before = snapshot(&m);
        let (ev, cfg) = quiet(3);
        train(&mut m, &data, &TrainConfig { tasks: active, ..cfg }, &ev, |_| Ok(())).unwrap();
        let after = snapshot(&m);
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.starts_with(&format!("{}.", frozen.prefix())) {
                assert_eq!(a, b, "{name} moved while {frozen} was inactive");
            } else if name.starts_with("backbone.") {
                assert_ne!(a, b, "{name} did not move");
            }
        }
    }
}

#[test]
fn evaluation_does_not_mutate_and_repeats_exactly() {
    let data = scenes(5, 4);
    let m = small_model(3);
    let before = snapshot(&m);
    let buffers: Vec<_> = m.buffers().values().cloned().collect();
    let ev = EvalConfig::default();
    let a = evaluate(&m, &data, &ev).unwrap();
    let b = evaluate(&m, &data, &ev).unwrap();
    assert_eq!(a, b);
    assert_eq!(snapshot(&m), before);
    assert_eq!(m.buffers().values().cloned().collect::<Vec<_>>(), buffers);
}

#[test]
fn every_active_term_descends_over_two_hundred_steps() {
    let data = scenes(4, 6);
    for seed in 0..10 {
        let mut m = small_model(seed);
        let (ev, cfg) = quiet(200);
        let log = train(&mut m, &data, &TrainConfig { seed, lr: 2e-3, ..cfg }, &ev, |_| Ok(())).unwrap();
        let (first, last) = (&log.steps[0].loss, &log.steps[199].loss);
        for ((name, a), (_, b)) in first.terms().iter().zip(last.terms()) {
            if *a > 0.0 {
                assert!(b < *a, "seed {seed}: {name} went from {a} to {b}");
            }
        }
    }
}

#[test]
fn untrained_models_score_near_zero_map() {
    let data = scenes(20, 7);
    for seed in 0..5 {
        let r = evaluate(&small_model(seed), &data, &EvalConfig::default()).unwrap();
        assert!(r.det_map.unwrap() <= 0.1, "seed {seed}: {:?}", r.det_map);
    }
}

#[test]
fn non_finite_loss_aborts_with_step_and_term() {
    let mut data = scenes(4, 8);
    data[2].image.data_mut()[17] = f32::NAN;
    let mut m = small_model(4);
    let before = snapshot(&m);
    let (ev, cfg) = quiet(5);
    match train(&mut m, &data, &cfg, &ev, |_| Ok(())) {
        Err(e @ Error::NonFiniteLoss { step: 1, .. }) => assert!(e.to_string().contains("step 1: term `center`"), "{e}"),
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|l| l.steps.len())),
    }
    assert_eq!(snapshot(&m), before);
}

#[test]
fn inactive_model_task_is_rejected() {
    let b = BackboneConfig { stage_widths: vec![8, 8], stage_strides: vec![2, 2], block_depth: 1, norm: NormKind::Batch };
    let h = HeadConfig { tasks: [Task::Segmentation].into_iter().collect(), seg_resolution: 16, head_width: 8, ..HeadConfig::default() };
    let mut m = build_model::<f32>(&b, &h, 0).unwrap();
    let (ev, cfg) = quiet(1);
    assert!(train(&mut m, &scenes(2, 0), &cfg, &ev, |_| Ok(())).is_err());
}
