use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mcn_core::bench::{compare_mcn_vs_stn, BenchParams};
use mcn_core::checks::{run_selftest, Fault};
use mcn_core::codec::{DecodeParams, SceneAnnotation, PERSON_CLASS};
use mcn_core::losses::LossWeights;
use mcn_core::metrics::{coco_thresholds, MetricReport};
use mcn_core::model::{
    build_model, format_tasks, load_config, load_weights, parse_tasks, save_config, save_weights, BackboneConfig,
    ClassMode, HeadConfig, McnModel, ModelConfig, Task,
};
use mcn_core::synth::{decode_ppm, encode_ppm, generate_dataset, read_scenes, rle_encode, write_scenes, DatasetConfig, Scene};
use mcn_core::tensor::Tensor;
use mcn_core::train::{evaluate, predict_scenes, train, EvalConfig, TrainConfig, TrainEvent};
use serde_json::json;

use crate::args::*;
use crate::manifest::{hash_inputs, sha256_file, strict_from_env, RunManifest, TOOL_VERSION};
use crate::overlay::{render_overlay, Prediction, SegPrediction, PREDICTION_VERSION};
use crate::UsageError;

pub const DATASET_FILE: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.mcnw";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const OVERLAY_FILE: &str = "overlay.ppm";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

pub fn run_command(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(cmd, a),
        Command::Train(a) => train_cmd(cmd, a),
        Command::Eval(a) => eval_cmd(cmd, a),
        Command::Infer(a) => infer(cmd, a),
        Command::Render(a) => render(cmd, a),
        Command::Bench(a) => bench(cmd, a),
        Command::Selftest(a) => selftest(cmd, a),
        Command::Replay(a) => replay(a),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// The weight file's config lives next to it with a `.json` extension.
pub fn config_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

fn load_model(weights: &Path) -> Result<McnModel<f32>> {
    let cfg_path = config_path(weights);
    let cfg = load_config(&cfg_path).with_context(|| format!("loading model config {}", cfg_path.display()))?;
    let mut model = build_model::<f32>(&cfg.backbone, &cfg.heads, 0)?;
    load_weights(weights, &mut model).with_context(|| format!("loading weights {}", weights.display()))?;
    Ok(model)
}

fn save_model(model: &McnModel<f32>, weights: &Path) -> Result<()> {
    save_weights(model, weights)?;
    save_config(model.config(), config_path(weights))?;
    Ok(())
}

fn backbone_from(a: &ArchArgs) -> Result<BackboneConfig> {
    let b = BackboneConfig {
        stage_widths: a.widths.clone(),
        stage_strides: a.strides.clone(),
        block_depth: a.depth,
        norm: a.norm,
    };
    b.validate()?;
    Ok(b)
}

fn decode_from(a: &DecodeArgs) -> DecodeParams {
    DecodeParams {
        top_k: a.top_k,
        score_threshold: a.score_threshold,
        keypoint_threshold: a.keypoint_threshold,
    }
}

fn parse_iou(s: &str) -> Result<Vec<f64>> {
    if s == "coco" {
        return Ok(coco_thresholds());
    }
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| usage(format!("--iou `{s}`: {e}")))?;
    if v.is_empty() || v.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(usage(format!("--iou `{s}`: thresholds must lie in (0, 1]")));
    }
    Ok(v)
}

fn eval_from(decode: &DecodeArgs, metrics: &MetricArgs, batch_size: usize) -> Result<EvalConfig> {
    Ok(EvalConfig {
        decode: decode_from(decode),
        iou_thresholds: parse_iou(&metrics.iou)?,
        pck_alpha: metrics.pck_alpha,
        oks_sigma: metrics.oks_sigma,
        batch_size,
    })
}

/// Keeps only person boxes and person pixels, for single-class models.
pub fn person_only(scene: &Scene) -> Scene {
    let a = &scene.annotation;
    let mut out = SceneAnnotation::empty(a.height, a.width);
    for (i, b) in a.boxes.iter().enumerate() {
        if b.class != PERSON_CLASS {
            continue;
        }
        if let Some(p) = a.keypoints_of(i) {
            let mut p = p.clone();
            p.box_index = out.boxes.len();
            out.persons.push(p);
        }
        out.boxes.push(*b);
    }
    let person_id = PERSON_CLASS as u16 + 1;
    out.seg_map = a.seg_map.iter().map(|&v| if v == person_id { v } else { 0 }).collect();
    Scene {
        image: scene.image.clone(),
        annotation: out,
    }
}

fn metrics_table(r: &MetricReport) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut s = format!("{:<18} {:>8}\n", "metric", "value");
    for (name, v) in [
        ("det mAP", r.det_map),
        ("det mAP@0.5", r.det_map50),
        ("seg mIoU", r.seg_miou),
        ("pose PCK", r.pose_pck),
        ("pose OKS mAP", r.pose_oks_map),
    ] {
        s.push_str(&format!("{name:<18} {:>8}\n", f(v)));
    }
    s.push_str(&format!("{:<18} {:>8}\n", "images", r.images));
    s
}

fn gen(cmd: &Command, a: &GenArgs) -> Result<()> {
    let cfg = DatasetConfig {
        height: a.size,
        width: a.size,
        num_classes: a.classes,
        max_objects: a.max_objects,
        num_keypoints: a.keypoints,
        seed: a.seed,
        scenes: a.scenes as usize,
        no_collision: !a.allow_collisions,
        pose_fraction: a.pose_fraction,
    };
    cfg.validate()?;
    RunManifest::new(cmd, &a.out, json!({ "dataset": cfg }), Default::default()).write(&a.out)?;
    let scenes = generate_dataset(&cfg)?;
    write_scenes(&a.out, &scenes)?;
    write_json(&a.out.join(DATASET_FILE), &cfg)?;
    println!("wrote {} scenes ({}x{}) to {}", scenes.len(), a.size, a.size, a.out.display());
    Ok(())
}

/// Class and keypoint counts of a dataset directory: `dataset.json` when
/// present, otherwise the largest ids found in the annotations.
fn dataset_shape(dir: &Path, scenes: &[Scene]) -> Result<(usize, usize)> {
    let p = dir.join(DATASET_FILE);
    if p.exists() {
        let cfg: DatasetConfig = serde_json::from_str(&fs::read_to_string(&p)?)
            .with_context(|| format!("parsing {}", p.display()))?;
        return Ok((cfg.num_classes, cfg.num_keypoints));
    }
    let mut classes = 1;
    let mut keypoints = 0;
    for s in scenes {
        let a = &s.annotation;
        classes = a.boxes.iter().map(|b| b.class + 1).fold(classes, usize::max);
        classes = a.seg_map.iter().map(|&v| v as usize).fold(classes, usize::max);
        keypoints = a.persons.iter().map(|p| p.keypoints.len()).fold(keypoints, usize::max);
    }
    Ok((classes, if keypoints == 0 { 5 } else { keypoints }))
}

fn train_cmd(cmd: &Command, a: &TrainArgs) -> Result<()> {
    let tasks = parse_tasks(&a.tasks)?;
    let backbone = backbone_from(&a.arch)?;
    let mut scenes = read_scenes(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    if scenes.is_empty() {
        bail!("dataset {} has no scenes", a.data.display());
    }
    let (h, w) = (scenes[0].annotation.height, scenes[0].annotation.width);
    if let Some(s) = scenes.iter().find(|s| (s.annotation.height, s.annotation.width) != (h, w)) {
        bail!(
            "all images must share one size: {w}x{h} and {}x{}",
            s.annotation.width,
            s.annotation.height
        );
    }
    let (ds_classes, ds_keypoints) = dataset_shape(&a.data, &scenes)?;
    let mut num_classes = a.num_classes.unwrap_or(ds_classes);
    if a.classes == ClassMode::Single {
        num_classes = 1;
        scenes = scenes.iter().map(person_only).collect();
    }
    let heads = HeadConfig {
        tasks: tasks.clone(),
        class_mode: a.classes,
        num_classes,
        num_keypoints: a.keypoints.unwrap_or(ds_keypoints),
        seg_resolution: a.seg_res.unwrap_or(h),
        output_stride: backbone.output_stride(),
        head_width: a.arch.head_width,
    };
    heads.validate()?;
    backbone.check_heads(&heads)?;
    let tcfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        optimizer: a.optimizer,
        weights: LossWeights {
            lambda_size: a.lambda_size,
            lambda_seg: a.lambda_seg,
            lambda_joint: a.lambda_joint,
        },
        eval_interval: a.eval_interval,
        seed: a.seed,
        tasks: tasks.clone(),
        flip: a.flip,
        ..TrainConfig::default()
    };
    tcfg.validate()?;
    let ecfg = eval_from(&a.decode, &a.metrics, 8)?;
    let mcfg = ModelConfig {
        backbone: backbone.clone(),
        heads: heads.clone(),
    };
    let resolved = json!({
        "dataset": { "scenes": scenes.len(), "height": h, "width": w, "num_classes": ds_classes, "num_keypoints": ds_keypoints },
        "model": mcfg,
        "train": tcfg,
        "eval": ecfg,
    });
    let inputs = hash_inputs(&[("data", &a.data)])?;
    RunManifest::new(cmd, &a.out, resolved, inputs).write(&a.out)?;

    let mut model = build_model::<f32>(&backbone, &heads, a.seed)?;
    let counts = model.count_params();
    eprintln!(
        "training {} on {} scenes: {} parameters, {} steps",
        format_tasks(&tasks),
        scenes.len(),
        counts.total,
        a.steps
    );
    let ckpt_dir = a.out.join("checkpoints");
    let mut step_log = BufWriter::new(File::create(a.out.join("train_log.jsonl"))?);
    let mut eval_log = BufWriter::new(File::create(a.out.join("eval_log.jsonl"))?);
    let log_every = a.log_every.max(1);
    let steps = a.steps;
    let log = train(&mut model, &scenes, &tcfg, &ecfg, |ev| {
        match ev {
            TrainEvent::Step(s) => {
                writeln!(step_log, "{}", serde_json::to_string(s)?)?;
                if s.step % log_every == 0 || s.step == steps {
                    eprintln!("step {:>6}/{steps}  loss {:.5}", s.step, s.loss.total);
                }
            }
            TrainEvent::Eval { step, report, model } => {
                writeln!(eval_log, "{}", serde_json::to_string(&json!({ "step": step, "metrics": report }))?)?;
                if step < steps {
                    fs::create_dir_all(&ckpt_dir)?;
                    let p = ckpt_dir.join(format!("step_{step:06}.mcnw"));
                    save_weights(model, &p)?;
                    save_config(model.config(), config_path(&p))?;
                }
            }
        }
        Ok(())
    })?;
    step_log.flush()?;
    eval_log.flush()?;

    let weights = a.out.join(MODEL_FILE);
    save_model(&model, &weights)?;
    let report = match log.evals.last() {
        Some((_, r)) => r.clone(),
        None => evaluate(&model, &scenes, &ecfg)?,
    };
    write_json(&a.out.join(METRICS_FILE), &report)?;
    let final_loss = log.steps.last().map(|s| s.loss.clone());
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "steps": log.steps.len(),
            "final_loss": final_loss,
            "model_sha256": sha256_file(&weights)?,
            "metrics": report,
        }),
    )?;
    print!("{}", metrics_table(&report));
    Ok(())
}

fn eval_cmd(cmd: &Command, a: &EvalArgs) -> Result<()> {
    let ecfg = eval_from(&a.decode, &a.metrics, a.batch_size)?;
    let inputs = hash_inputs(&[("model", &a.model), ("model_config", &config_path(&a.model)), ("data", &a.data)])?;
    RunManifest::new(cmd, &a.out, json!({ "eval": ecfg }), inputs).write(&a.out)?;
    let model = load_model(&a.model)?;
    let mut scenes = read_scenes(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    if model.heads().class_mode == ClassMode::Single {
        scenes = scenes.iter().map(person_only).collect();
    }
    let report = evaluate(&model, &scenes, &ecfg)?;
    write_json(&a.out.join(METRICS_FILE), &report)?;
    print!("{}", metrics_table(&report));
    Ok(())
}

fn infer(cmd: &Command, a: &InferArgs) -> Result<()> {
    let inputs = hash_inputs(&[("model", &a.model), ("model_config", &config_path(&a.model)), ("input", &a.input)])?;
    let decode = decode_from(&a.decode);
    RunManifest::new(cmd, &a.out, json!({ "decode": decode }), inputs).write(&a.out)?;
    let model = load_model(&a.model)?;
    let (w, h, rgb) = decode_ppm(&fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?)?;
    let image = Tensor::new(
        vec![3, h, w],
        (0..3).flat_map(|c| rgb.iter().skip(c).step_by(3).map(|&v| v as f32 / 255.0)).collect(),
    )?;
    let scene = Scene {
        image,
        annotation: SceneAnnotation::empty(h, w),
    };
    let cfg = EvalConfig {
        decode,
        batch_size: 1,
        ..EvalConfig::default()
    };
    let p = predict_scenes(&model, &[scene], &cfg)?.remove(0);
    let heads = model.heads();
    let pred = Prediction {
        version: PREDICTION_VERSION.into(),
        width: w,
        height: h,
        tasks: heads.tasks.iter().map(|t| t.to_string()).collect(),
        num_classes: heads.num_classes,
        num_keypoints: if heads.has(Task::Pose) { heads.num_keypoints } else { 0 },
        detections: p.detections,
        poses: p.poses,
        seg: p.seg.map(|m| SegPrediction {
            resolution: p.seg_resolution,
            runs: rle_encode(&m),
        }),
    };
    write_json(&a.out.join(PREDICTION_FILE), &pred)?;
    let overlay = render_overlay(&rgb, &pred)?;
    fs::write(a.out.join(OVERLAY_FILE), encode_ppm(w, h, &overlay))?;
    println!(
        "{} detections, {} poses, segmentation {}",
        pred.detections.len(),
        pred.poses.len(),
        if pred.seg.is_some() { "yes" } else { "no" }
    );
    Ok(())
}

fn render(cmd: &Command, a: &RenderArgs) -> Result<()> {
    let inputs = hash_inputs(&[("prediction", &a.prediction), ("input", &a.input)])?;
    RunManifest::new(cmd, &a.out, json!({}), inputs).write(&a.out)?;
    let text = fs::read_to_string(&a.prediction).with_context(|| format!("reading {}", a.prediction.display()))?;
    let pred: Prediction = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.prediction.display()))?;
    if pred.version != PREDICTION_VERSION {
        bail!("unsupported prediction version {} (supported: {PREDICTION_VERSION})", pred.version);
    }
    let (w, h, rgb) = decode_ppm(&fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?)?;
    if (w, h) != (pred.width, pred.height) {
        bail!("image is {w}x{h}, prediction is for {}x{}", pred.width, pred.height);
    }
    let overlay = render_overlay(&rgb, &pred)?;
    fs::write(a.out.join(OVERLAY_FILE), encode_ppm(w, h, &overlay))?;
    Ok(())
}

fn bench(cmd: &Command, a: &BenchArgs) -> Result<()> {
    let tasks = parse_tasks(&a.tasks)?;
    let backbone = backbone_from(&a.arch)?;
    let heads = HeadConfig {
        tasks,
        class_mode: ClassMode::Multi,
        num_classes: a.classes,
        num_keypoints: a.keypoints,
        seg_resolution: a.seg_res,
        output_stride: backbone.output_stride(),
        head_width: a.arch.head_width,
    };
    heads.validate()?;
    backbone.check_heads(&heads)?;
    let params = BenchParams {
        warmup: a.warmup,
        repeats: a.repeats as usize,
        seed: a.seed,
    };
    params.validate()?;
    let out = match (&a.out, &a.json) {
        (Some(o), Some(j)) if !j.starts_with(o) => {
            return Err(usage(format!("--json {} is outside --out {}", j.display(), o.display())))
        }
        (Some(o), _) => Some(o.clone()),
        (None, Some(j)) => Some(j.parent().map(Path::to_path_buf).unwrap_or_default()),
        (None, None) => None,
    };
    if let Some(o) = &out {
        let resolved = json!({ "backbone": backbone, "heads": heads, "size": a.size });
        RunManifest::new(cmd, o, resolved, Default::default()).write(o)?;
    }
    let report = compare_mcn_vs_stn(&backbone, &heads, [1, 3, a.size, a.size], &params)?;
    print!("{}", report.table());
    if let Some(j) = &a.json {
        write_json(j, &report)?;
    }
    Ok(())
}

fn selftest(cmd: &Command, a: &SelftestArgs) -> Result<()> {
    if let Some(o) = &a.out {
        RunManifest::new(cmd, o, json!({}), Default::default()).write(o)?;
    }
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::FocalSign => Fault::FocalSign,
    });
    let results = run_selftest(fault);
    for r in &results {
        println!("{} {:<28} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if let Some(o) = &a.out {
        let rows: Vec<_> = results
            .iter()
            .map(|r| json!({ "name": r.name, "passed": r.passed, "detail": r.detail }))
            .collect();
        write_json(&o.join("selftest.json"), &rows)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("self-test failed: {}", failed.join(", "));
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if matches!(m.invocation, Command::Replay(_)) {
        bail!("manifest records a replay, not a run");
    }
    let strict = strict_from_env();
    if m.tool_version != TOOL_VERSION {
        let msg = format!("manifest was written by version {}, this is {TOOL_VERSION}", m.tool_version);
        if strict {
            return Err(anyhow!(msg));
        }
        eprintln!("warning: {msg}");
    }
    if strict {
        m.verify_inputs()?;
    }
    let mut cmd = m.invocation.clone();
    cmd.set_out_dir(a.out.clone());
    eprintln!("replaying `{}` into {}", cmd.name(), a.out.display());
    run_command(&cmd)
}
