//! Named property checks shared by `mcn selftest` and the acceptance suite:
//! finite-difference gradient audits, a codec roundtrip and brute-force
//! metric oracles.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::{
    argmax_classes, decode_detections, decode_poses, encode_targets, find_peaks, DecodeParams, Peak,
};
use crate::error::Result;
use crate::losses::{
    focal_loss_scaled, masked_l1, seg_cross_entropy, total_loss, BatchTargets, L1Mask, LossWeights,
};
use crate::metrics::{average_precision, box_iou, seg_miou, Bbox};
use crate::model::{build_model, BackboneConfig, HeadConfig, Mode, NormKind, Task, TaskSet};
use crate::synth::{generate_dataset, generate_scene, DatasetConfig};
use crate::tensor::{grad_check, Tape, Tensor, Var};
use crate::train::stack_images;

/// Relative-error ceiling for every gradient audit.
pub const GRAD_TOLERANCE: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Deliberate bugs the self-test can plant to prove it notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the focal loss gradient.
    FocalSign,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::model::splitmix64(seed ^ stream.wrapping_mul(0x9e37_79b9)))
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Reduces `v` to a scalar through a fixed random weighting so that every
/// output element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, v: Var, w: &[f64]) -> Result<Var> {
    let c = tape.constant(tape.shape(v).to_vec(), w.to_vec())?;
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

/// Every tape op, each differentiated w.r.t. one input with the others
/// held fixed. Returns `(op name, probe point, function)`.
fn op_cases(seed: u64, fault: Option<Fault>) -> Vec<(&'static str, Tensor<f64>, OpFn)> {
    let mut r = rng(seed, 1);
    let img = [2, 3, 5, 5];
    let mut cases: Vec<(&'static str, Tensor<f64>, OpFn)> = Vec::new();
    let out_weights = |r: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };

    // conv2d, stride 2 pad 1 → [2, 4, 3, 3]
    let x = normal(&mut r, &img);
    let wt = normal(&mut r, &[4, 3, 3, 3]);
    let b = normal(&mut r, &[4]);
    let ow = out_weights(&mut r, 2 * 4 * 3 * 3);
    {
        let (wt, b, ow) = (wt.clone(), b.clone(), ow.clone());
        cases.push(("conv2d/input", x.clone(), Box::new(move |t, v| {
            let (w, b) = (t.leaf(&wt), t.leaf(&b));
            let y = t.conv2d(v, w, Some(b), 2, 1)?;
            weighted_sum(t, y, &ow)
        })));
    }
    {
        let (x, b, ow) = (x.clone(), b.clone(), ow.clone());
        cases.push(("conv2d/weight", wt.clone(), Box::new(move |t, v| {
            let (x, b) = (t.leaf(&x), t.leaf(&b));
            let y = t.conv2d(x, v, Some(b), 2, 1)?;
            weighted_sum(t, y, &ow)
        })));
    }
    {
        let (x, wt, ow) = (x.clone(), wt.clone(), ow.clone());
        cases.push(("conv2d/bias", b.clone(), Box::new(move |t, v| {
            let (x, w) = (t.leaf(&x), t.leaf(&wt));
            let y = t.conv2d(x, w, Some(v), 2, 1)?;
            weighted_sum(t, y, &ow)
        })));
    }

    let n = img.iter().product();
    let ow = out_weights(&mut r, n);
    let x = normal(&mut r, &img);
    for (name, f) in [
        ("relu", Box::new(|t: &mut Tape<f64>, v| Ok(t.relu(v))) as Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>),
        ("sigmoid", Box::new(|t: &mut Tape<f64>, v| Ok(t.sigmoid(v)))),
        ("max_pool3", Box::new(|t: &mut Tape<f64>, v| t.max_pool3(v))),
        ("softmax_channels", Box::new(|t: &mut Tape<f64>, v| t.softmax_channels(v))),
        ("scale", Box::new(|t: &mut Tape<f64>, v| Ok(t.scale(v, -1.7)))),
    ] {
        let ow = ow.clone();
        cases.push((name, x.clone(), Box::new(move |t, v| {
            let y = f(t, v)?;
            weighted_sum(t, y, &ow)
        })));
    }
    cases.push(("sum", x.clone(), Box::new(|t, v| Ok(t.sum(v)))));

    let other = normal(&mut r, &img);
    {
        let (o, ow) = (other.clone(), ow.clone());
        cases.push(("add", x.clone(), Box::new(move |t, v| {
            let o = t.leaf(&o);
            let y = t.add(v, o)?;
            weighted_sum(t, y, &ow)
        })));
    }
    {
        let (o, ow) = (other.clone(), ow.clone());
        cases.push(("mul", x.clone(), Box::new(move |t, v| {
            let o = t.leaf(&o);
            let y = t.mul(o, v)?;
            weighted_sum(t, y, &ow)
        })));
    }

    let up_w = out_weights(&mut r, 2 * 3 * 9 * 7);
    cases.push(("upsample_bilinear", x.clone(), Box::new(move |t, v| {
        let y = t.upsample_bilinear(v, 9, 7)?;
        weighted_sum(t, y, &up_w)
    })));

    // Normalization layers, each w.r.t. input, gamma and beta.
    let gamma = uniform(&mut r, &[3], 0.5, 1.5);
    let beta = normal(&mut r, &[3]);
    let mean: Vec<f64> = (0..3).map(|_| r.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..3).map(|_| r.random_range(0.5..2.0)).collect();
    #[derive(Clone, Copy)]
    enum Norm {
        Train,
        Eval,
        Affine,
    }
    let apply = move |t: &mut Tape<f64>, kind: Norm, x: Var, g: Var, b: Var, mean: &[f64], var: &[f64]| -> Result<Var> {
        match kind {
            Norm::Train => t.batch_norm_train(x, g, b, 1e-5).map(|r| r.0),
            Norm::Eval => t.batch_norm_eval(x, g, b, mean, var, 1e-5),
            Norm::Affine => t.channel_affine(x, g, b),
        }
    };
    for (kind, prefix) in [(Norm::Train, "batch_norm_train"), (Norm::Eval, "batch_norm_eval"), (Norm::Affine, "channel_affine")] {
        let names: [&'static str; 3] = match prefix {
            "batch_norm_train" => ["batch_norm_train/input", "batch_norm_train/gamma", "batch_norm_train/beta"],
            "batch_norm_eval" => ["batch_norm_eval/input", "batch_norm_eval/gamma", "batch_norm_eval/beta"],
            _ => ["channel_affine/input", "channel_affine/gamma", "channel_affine/beta"],
        };
        for (slot, name) in names.into_iter().enumerate() {
            let (x, g, b, ow, mean, var) = (x.clone(), gamma.clone(), beta.clone(), ow.clone(), mean.clone(), var.clone());
            let probe = [&x, &g, &b][slot].clone();
            cases.push((name, probe, Box::new(move |t, v| {
                let mut leaves = [None, None, None];
                leaves[slot] = Some(v);
                let xv = leaves[0].unwrap_or_else(|| t.leaf(&x));
                let gv = leaves[1].unwrap_or_else(|| t.leaf(&g));
                let bv = leaves[2].unwrap_or_else(|| t.leaf(&b));
                let y = apply(t, kind, xv, gv, bv, &mean, &var)?;
                weighted_sum(t, y, &ow)
            })));
        }
    }

    // Losses. The focal probe stays inside (0, 1) and its target has exact
    // peaks, Gaussian shoulders and zeros.
    let heat_shape = [2, 2, 4, 4];
    let pred = uniform(&mut r, &heat_shape, 0.05, 0.95);
    let gt: Vec<f64> = (0..pred.numel())
        .map(|i| match i % 7 {
            0 => 1.0,
            1 | 2 => r.random_range(0.1..0.9),
            _ => 0.0,
        })
        .collect();
    let focal_scale = if fault == Some(Fault::FocalSign) { -1.0 } else { 1.0 };
    cases.push(("focal_loss", pred, Box::new(move |t, v| focal_loss_scaled(t, v, gt.clone(), focal_scale))));

    let pred = normal(&mut r, &[2, 4, 3, 3]);
    let gt: Vec<f64> = normal(&mut r, &[2, 4, 3, 3]).into_data();
    let mask: Vec<f64> = (0..2 * 2 * 9).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    cases.push(("masked_l1", pred, Box::new(move |t, v| {
        masked_l1(t, v, gt.clone(), L1Mask { values: mask.clone(), groups: 2 })
    })));

    let probs = uniform(&mut r, &[2, 3, 4, 4], 0.05, 1.0);
    let ids: Vec<u16> = (0..2 * 16).map(|_| r.random_range(0..3u16)).collect();
    cases.push(("seg_cross_entropy", probs, Box::new(move |t, v| seg_cross_entropy(t, v, ids.clone()))));

    cases
}

/// Largest relative error per op across `seeds`, worst first.
pub fn op_gradient_errors(seeds: u64, fault: Option<Fault>) -> Result<Vec<(String, f64)>> {
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    for seed in 0..seeds {
        for (name, x, f) in op_cases(seed, fault) {
            let err = grad_check(f, &x, FD_STEP)?;
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max(err);
        }
    }
    let mut out: Vec<(String, f64)> = worst.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}

pub fn check_op_gradients(seeds: u64, fault: Option<Fault>) -> CheckResult {
    match op_gradient_errors(seeds, fault) {
        Ok(errs) => {
            let failing: Vec<String> = errs
                .iter()
                .filter(|(_, e)| !(*e <= GRAD_TOLERANCE))
                .map(|(n, e)| format!("grad_check/{n} ({e:.2e})"))
                .collect();
            if failing.is_empty() {
                let (n, e) = &errs[0];
                CheckResult::new("grad_check/ops", true, format!("{} ops, {seeds} seeds, worst {n} {e:.2e}", errs.len()))
            } else {
                CheckResult::new("grad_check/ops", false, format!("failing: {}", failing.join(", ")))
            }
        }
        Err(e) => CheckResult::new("grad_check/ops", false, e.to_string()),
    }
}

/// Smallest three-task setup whose feature grid still holds a few objects.
fn loss_check_setup(seed: u64) -> (BackboneConfig, HeadConfig, DatasetConfig) {
    let backbone = BackboneConfig {
        stage_widths: vec![3, 4],
        stage_strides: vec![2, 2],
        block_depth: 1,
        norm: NormKind::Batch,
    };
    let heads = HeadConfig {
        num_classes: 2,
        num_keypoints: 3,
        seg_resolution: 8,
        head_width: 3,
        ..HeadConfig::default()
    };
    let data = DatasetConfig {
        height: 16,
        width: 16,
        num_classes: 2,
        num_keypoints: 3,
        max_objects: 2,
        scenes: 2,
        no_collision: false,
        seed,
        ..DatasetConfig::default()
    };
    (backbone, heads, data)
}

/// Worst relative error of ∂L/∂θ over every parameter tensor θ of a
/// three-task model on a 16×16 batch of two, in f64 and train mode.
pub fn total_loss_gradient_error(seed: u64) -> Result<(String, f64)> {
    let (backbone, heads, data) = loss_check_setup(seed);
    let model = build_model::<f64>(&backbone, &heads, seed)?;
    let scenes = generate_dataset(&data)?;
    let refs: Vec<_> = scenes.iter().collect();
    let images: Tensor<f64> = stack_images(&refs)?;
    let encoded = scenes
        .iter()
        .map(|s| encode_targets(&s.annotation, &heads))
        .collect::<Result<Vec<_>>>()?;
    let targets = BatchTargets::<f64>::stack(&encoded)?;
    let tasks: TaskSet = Task::ALL.into_iter().collect();
    let weights = LossWeights::default();

    let mut worst = (String::new(), 0.0f64);
    for (name, param) in model.params() {
        let f = |tape: &mut Tape<f64>, v: Var| -> Result<Var> {
            let x = tape.leaf(&images);
            let preset = BTreeMap::from([(name.clone(), v)]);
            let (out, _) = model.forward_with(tape, x, Mode::Train, &tasks, preset)?;
            Ok(total_loss(tape, &out, &targets, &weights, &tasks)?.0)
        };
        let err = grad_check(f, param, FD_STEP)?;
        if err >= worst.1 {
            worst = (name.clone(), err);
        }
    }
    Ok(worst)
}

pub fn check_total_loss_gradient(seeds: u64) -> CheckResult {
    let mut worst = (String::new(), 0.0f64);
    for seed in 0..seeds {
        match total_loss_gradient_error(seed) {
            Ok((name, e)) if e >= worst.1 => worst = (format!("{name} (seed {seed})"), e),
            Ok(_) => {}
            Err(e) => return CheckResult::new("grad_check/total_loss", false, format!("seed {seed}: {e}")),
        }
    }
    CheckResult::new(
        "grad_check/total_loss",
        worst.1 <= GRAD_TOLERANCE,
        format!("{seeds} seeds, worst {} {:.2e}", worst.0, worst.1),
    )
}

/// Encodes collision-free scenes, decodes the targets as if predicted and
/// compares with the annotation: box count, centers within 0.5 px, sizes
/// exact, visible joints within 0.5 px. Returns the box count or the first
/// discrepancy.
pub fn codec_roundtrip(scenes: usize, seed: u64) -> Result<std::result::Result<usize, String>> {
    let data = DatasetConfig {
        seed,
        scenes,
        no_collision: true,
        ..DatasetConfig::default()
    };
    let heads = HeadConfig {
        num_classes: data.num_classes,
        num_keypoints: data.num_keypoints,
        seg_resolution: 16,
        ..HeadConfig::default()
    };
    let params = DecodeParams::default();
    let mut boxes = 0;
    for i in 0..scenes {
        let ann = generate_scene(&data, i)?.annotation;
        let enc = encode_targets(&ann, &heads)?;
        if enc.collisions != 0 {
            return Ok(Err(format!("scene {i}: {} collisions in a collision-free scene", enc.collisions)));
        }
        let out = enc.as_outputs::<f64>();
        let dets = decode_detections(&out, 0, &params, heads.output_stride)?;
        if dets.len() != ann.boxes.len() {
            return Ok(Err(format!("scene {i}: {} boxes decoded, {} annotated", dets.len(), ann.boxes.len())));
        }
        let poses = decode_poses(&out, 0, &dets, &params, heads.output_stride)?;
        for (bi, gt) in ann.boxes.iter().enumerate() {
            let found = dets.iter().position(|d| {
                d.class == gt.class && (d.cx - gt.cx).abs() <= 0.5 && (d.cy - gt.cy).abs() <= 0.5
            });
            let Some(di) = found else {
                return Ok(Err(format!("scene {i}: box {bi} has no decoded center within 0.5 px")));
            };
            let d = dets[di];
            if d.w != gt.w || d.h != gt.h {
                return Ok(Err(format!(
                    "scene {i}: box {bi} size {}×{} decoded as {}×{}",
                    gt.w, gt.h, d.w, d.h
                )));
            }
            if let Some(person) = ann.keypoints_of(bi) {
                let pose = poses.iter().find(|p| p.detection == d).expect("every person detection has a pose");
                // Occluded joints have no peak of their own and may snap to
                // a neighbour's; they are not scored anywhere either.
                for (j, kp) in person.keypoints.iter().enumerate().filter(|(_, k)| k.visible) {
                    let (x, y) = pose.joints[j];
                    if (x - kp.x).abs() > 0.5 || (y - kp.y).abs() > 0.5 {
                        return Ok(Err(format!(
                            "scene {i}: person {bi} joint {j} at ({:.3}, {:.3}) decoded as ({x:.3}, {y:.3})",
                            kp.x, kp.y
                        )));
                    }
                }
            }
            boxes += 1;
        }
    }
    Ok(Ok(boxes))
}

pub fn check_codec_roundtrip(scenes: usize) -> CheckResult {
    match codec_roundtrip(scenes, 0) {
        Ok(Ok(boxes)) => CheckResult::new("codec/roundtrip", true, format!("{scenes} scenes, {boxes} boxes recovered")),
        Ok(Err(why)) => CheckResult::new("codec/roundtrip", false, why),
        Err(e) => CheckResult::new("codec/roundtrip", false, e.to_string()),
    }
}

/// Peaks by direct neighbourhood comparison.
pub fn brute_force_peaks(maps: &[f64], channels: usize, h: usize, w: usize) -> Vec<Peak> {
    let mut out = Vec::new();
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let v = maps[(c * h + y) * w + x];
                let mut is_max = true;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if maps[(c * h + ny) * w + nx] > v {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    out.push(Peak { channel: c, row: y, col: x, score: v });
                }
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.channel, a.row, a.col).cmp(&(b.channel, b.row, b.col))));
    out
}

/// AP from first principles: try every prediction in score order against
/// every free ground truth, then integrate the right-maximum precision
/// envelope one true positive at a time.
pub fn brute_force_ap(preds: &[(f64, Bbox)], gts: &[Bbox], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0));
    let mut free = vec![true; gts.len()];
    let mut hits = Vec::new();
    for &p in &order {
        let mut best: Option<usize> = None;
        for g in 0..gts.len() {
            let iou = box_iou(preds[p].1, gts[g]);
            if free[g] && iou >= thr && best.is_none_or(|b| iou > box_iou(preds[p].1, gts[b])) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            free[g] = false;
        }
        hits.push(best.is_some());
    }
    let precision_at = |k: usize| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            let envelope = (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            ap += envelope / gts.len() as f64;
        }
    }
    ap
}

/// mIoU by counting pixel sets class by class.
pub fn brute_force_miou(pred: &[u16], gt: &[u16], num_classes: usize) -> f64 {
    let mut ious = Vec::new();
    for c in 0..=num_classes as u16 {
        let inter = pred.iter().zip(gt).filter(|(&p, &g)| p == c && g == c).count();
        let union = pred.iter().zip(gt).filter(|(&p, &g)| p == c || g == c).count();
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    if ious.is_empty() {
        1.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

fn random_box(r: &mut ChaCha8Rng) -> Bbox {
    [r.random_range(4.0..28.0), r.random_range(4.0..28.0), r.random_range(2.0..14.0), r.random_range(2.0..14.0)]
}

/// Runs every metric oracle on `fixtures` random fixtures per metric.
pub fn check_metric_oracles(fixtures: usize, seed: u64) -> Vec<CheckResult> {
    let mut r = rng(seed, 2);
    let mut results = Vec::new();

    let mut bad = None;
    for i in 0..fixtures {
        let (c, h, w) = (r.random_range(1..3), 16, 16);
        // Coarse levels make plateaus and ties common.
        let maps: Vec<f64> = (0..c * h * w).map(|_| r.random_range(0..6) as f64 / 5.0).collect();
        if find_peaks(&maps, c, h, w) != brute_force_peaks(&maps, c, h, w) {
            bad = Some(i);
            break;
        }
    }
    results.push(CheckResult::new(
        "oracle/peaks",
        bad.is_none(),
        bad.map_or(format!("{fixtures} 16×16 heatmaps"), |i| format!("fixture {i} differs")),
    ));

    let mut bad = None;
    for i in 0..fixtures {
        let gts: Vec<Bbox> = (0..r.random_range(0..=5)).map(|_| random_box(&mut r)).collect();
        let mut preds: Vec<(f64, Bbox)> = Vec::new();
        for _ in 0..r.random_range(0..=5) {
            let b = match gts.get(r.random_range(0..gts.len().max(1))) {
                Some(g) if r.random_bool(0.6) => [g[0] + r.random_range(-2.0..2.0), g[1] + r.random_range(-2.0..2.0), g[2], g[3]],
                _ => random_box(&mut r),
            };
            preds.push((r.random_range(0.0..1.0), b));
        }
        let thr = [0.3, 0.5, 0.75][i % 3];
        let (a, b) = (average_precision(&preds, &gts, thr), brute_force_ap(&preds, &gts, thr));
        if (a - b).abs() > 1e-12 {
            bad = Some(format!("fixture {i}: {a} vs oracle {b}"));
            break;
        }
    }
    results.push(CheckResult::new(
        "oracle/average_precision",
        bad.is_none(),
        bad.unwrap_or(format!("{fixtures} fixtures of at most 5 boxes")),
    ));

    let mut bad = None;
    for i in 0..fixtures {
        let classes = r.random_range(1..4);
        let pred: Vec<u16> = (0..64).map(|_| r.random_range(0..=classes as u16)).collect();
        let gt: Vec<u16> = (0..64).map(|_| r.random_range(0..=classes as u16)).collect();
        let (a, b) = (seg_miou(&pred, &gt, classes), brute_force_miou(&pred, &gt, classes));
        if (a - b).abs() > 1e-12 {
            bad = Some(format!("fixture {i}: {a} vs oracle {b}"));
            break;
        }
    }
    results.push(CheckResult::new(
        "oracle/seg_miou",
        bad.is_none(),
        bad.unwrap_or(format!("{fixtures} 8×8 maps")),
    ));

    let mut bad = None;
    for i in 0..fixtures {
        let channels = r.random_range(2..5);
        let probs: Vec<f64> = (0..channels * 64).map(|_| r.random_range(0..4) as f64 / 3.0).collect();
        let got = argmax_classes(&probs, channels, 64);
        let want: Vec<u16> = (0..64)
            .map(|p| {
                let top = (0..channels).map(|c| probs[c * 64 + p]).fold(f64::MIN, f64::max);
                (0..channels).find(|&c| probs[c * 64 + p] == top).expect("non-empty") as u16
            })
            .collect();
        if got != want {
            bad = Some(i);
            break;
        }
    }
    results.push(CheckResult::new(
        "oracle/seg_argmax",
        bad.is_none(),
        bad.map_or(format!("{fixtures} 8×8 maps"), |i| format!("fixture {i} differs")),
    ));
    results
}

/// Everything `mcn selftest` runs, in order.
pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckResult> {
    let mut out = vec![check_op_gradients(10, fault), check_total_loss_gradient(10), check_codec_roundtrip(100)];
    out.extend(check_metric_oracles(50, 0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_and_a_planted_sign_flip_is_named() {
        assert!(check_op_gradients(1, None).passed);
        let bad = check_op_gradients(1, Some(Fault::FocalSign));
        assert!(!bad.passed);
        assert!(bad.detail.contains("grad_check/focal_loss"), "{}", bad.detail);
    }

    #[test]
    fn oracles_agree() {
        for r in check_metric_oracles(20, 7) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
