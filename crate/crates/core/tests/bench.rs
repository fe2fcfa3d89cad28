use mcn_core::bench::{compare_mcn_vs_stn, measure_forward, param_ratio, BenchParams, LatencyStats};
use mcn_core::model::{build_model, BackboneConfig, HeadConfig, NormKind, Task, TaskSet};

fn small() -> (BackboneConfig, HeadConfig) {
    (
        BackboneConfig { stage_widths: vec![8, 8], stage_strides: vec![2, 2], block_depth: 1, norm: NormKind::Batch },
        HeadConfig { seg_resolution: 32, head_width: 8, ..HeadConfig::default() },
    )
}

#[test]
fn five_repeats_give_five_samples_and_the_third_order_statistic() {
    let (b, h) = small();
    let m = build_model::<f32>(&b, &h, 0).unwrap();
    let s = measure_forward(&m, [1, 3, 32, 32], &BenchParams { warmup: 1, repeats: 5, seed: 0 }).unwrap();
    assert_eq!(s.samples_ms.len(), 5);
    let mut sorted = s.samples_ms.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(s.median_ms, sorted[2]);
    assert!((s.fps - 1000.0 / s.median_ms).abs() < 1e-9);
}

#[test]
fn too_few_repeats_is_a_config_error() {
    let (b, h) = small();
    let m = build_model::<f32>(&b, &h, 0).unwrap();
    assert!(measure_forward(&m, [1, 3, 32, 32], &BenchParams { warmup: 1, repeats: 4, seed: 0 }).is_err());
}

#[test]
fn doubling_the_input_increases_latency() {
    let (b, h) = small();
    let m = build_model::<f32>(&b, &h, 0).unwrap();
    let p = BenchParams { warmup: 2, repeats: 7, seed: 0 };
    let small = measure_forward(&m, [1, 3, 32, 32], &p).unwrap();
    let large = measure_forward(&m, [1, 3, 64, 64], &p).unwrap();
    assert!(large.median_ms > small.median_ms, "{} vs {}", large.median_ms, small.median_ms);
}

#[test]
fn single_task_ratios_are_exactly_one() {
    let (b, h) = small();
    let h = HeadConfig { tasks: [Task::Detection].into_iter().collect(), ..h };
    let r = compare_mcn_vs_stn(&b, &h, [1, 3, 32, 32], &BenchParams { warmup: 1, repeats: 5, seed: 0 }).unwrap();
    assert_eq!((r.latency_ratio, r.param_ratio), (1.0, 1.0));
    assert!(r.table().contains("latency ratio MCN/STN  1.000"));
}

#[test]
fn report_serializes_and_stays_consistent() {
    let (b, h) = small();
    let r = compare_mcn_vs_stn(&b, &h, [1, 3, 32, 32], &BenchParams { warmup: 1, repeats: 5, seed: 0 }).unwrap();
    assert_eq!(r.stns.len(), 3);
    assert_eq!(r.stn_composite_params, r.stns.iter().map(|s| s.params).sum::<usize>());
    let back: mcn_core::bench::BenchReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    for c in std::iter::once(&back.mcn).chain(&back.stns) {
        assert!((c.latency.fps - 1000.0 / c.latency.median_ms).abs() <= 1e-9 * c.latency.fps);
    }
    assert_eq!(back.stns.len(), 3);
    assert!(r.param_ratio < 1.0);
}

#[test]
fn adding_heads_never_shrinks_the_model() {
    let (b, h) = small();
    let p = BenchParams { warmup: 2, repeats: 9, seed: 0 };
    let mut prev: Option<(usize, LatencyStats)> = None;
    let mut tasks = TaskSet::new();
    for t in Task::ALL {
        tasks.insert(t);
        let m = build_model::<f32>(&b, &HeadConfig { tasks: tasks.clone(), ..h.clone() }, 0).unwrap();
        let params = m.count_params().total;
        let lat = measure_forward(&m, [1, 3, 32, 32], &p).unwrap();
        if let Some((pp, pl)) = &prev {
            assert!(params > *pp);
            assert!(lat.q3_ms + lat.iqr_ms >= pl.q1_ms - pl.iqr_ms, "{lat:?} vs {pl:?}");
        }
        prev = Some((params, lat));
    }
}

#[test]
fn default_backbone_parameter_ratio_is_below_bound() {
    let r = param_ratio(&BackboneConfig::default(), &HeadConfig::default()).unwrap();
    assert!(r <= 0.45, "{r}");
}
