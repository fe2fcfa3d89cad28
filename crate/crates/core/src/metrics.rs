//! Detection mAP, segmentation mIoU and pose PCK.
//!
//! Boxes are `[cx, cy, w, h]` in input pixels. Matching is greedy in score
//! order; precision-recall curves use all-point interpolation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::codec::{resample_seg, BoxAnnotation, Detection, PoseInstance, SceneAnnotation, PERSON_CLASS};
use crate::model::{Task, TaskSet};

pub type Bbox = [f64; 4];

impl Detection {
    pub fn bbox(&self) -> Bbox {
        [self.cx, self.cy, self.w, self.h]
    }
}

impl BoxAnnotation {
    pub fn bbox(&self) -> Bbox {
        [self.cx, self.cy, self.w, self.h]
    }
}

pub fn box_iou(a: Bbox, b: Bbox) -> f64 {
    let ix = ((a[0] + a[2] / 2.0).min(b[0] + b[2] / 2.0) - (a[0] - a[2] / 2.0).max(b[0] - b[2] / 2.0)).max(0.0);
    let iy = ((a[1] + a[3] / 2.0).min(b[1] + b[3] / 2.0) - (a[1] - a[3] / 2.0).max(b[1] - b[3] / 2.0)).max(0.0);
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// COCO-style thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Predictions of one image scored against its ground truths through a
/// similarity matrix `sim[pred][gt]` (IoU, OKS, …).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchInput {
    pub scores: Vec<f64>,
    pub sim: Vec<Vec<f64>>,
    pub num_gt: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Per-image greedy matching: each prediction in descending score order
/// takes the most similar unmatched ground truth with similarity ≥ `thr`.
/// Returns `(score, is_tp)` per prediction.
fn greedy_match(img: &MatchInput, thr: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..img.scores.len()).collect();
    order.sort_by(|&a, &b| img.scores[b].partial_cmp(&img.scores[a]).unwrap_or(Ordering::Equal));
    let mut taken = vec![false; img.num_gt];
    order
        .into_iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &s) in img.sim[p].iter().enumerate() {
                if !taken[g] && s >= thr && best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((g, s));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (img.scores[p], best.is_some())
        })
        .collect()
}

/// Area under the all-point interpolated PR curve of ranked TP/FP flags.
pub fn ap_from_ranked(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// AP over several images at one similarity threshold, with the TP/FP/FN
/// counts of the full ranking.
pub fn average_precision_matched(images: &[MatchInput], thr: f64) -> (f64, Counts) {
    let mut ranked: Vec<(f64, bool)> = images.iter().flat_map(|img| greedy_match(img, thr)).collect();
    // Stable: equal scores keep image order, then in-image decode order.
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let num_gt: usize = images.iter().map(|i| i.num_gt).sum();
    let flags: Vec<bool> = ranked.iter().map(|r| r.1).collect();
    let tp = flags.iter().filter(|&&f| f).count();
    let counts = Counts {
        tp,
        fp: flags.len() - tp,
        fn_: num_gt - tp,
    };
    (ap_from_ranked(&flags, num_gt), counts)
}

fn iou_input(preds: &[(f64, Bbox)], gts: &[Bbox]) -> MatchInput {
    MatchInput {
        scores: preds.iter().map(|p| p.0).collect(),
        sim: preds.iter().map(|p| gts.iter().map(|&g| box_iou(p.1, g)).collect()).collect(),
        num_gt: gts.len(),
    }
}

/// Single-image, single-class AP of scored boxes.
pub fn average_precision(preds: &[(f64, Bbox)], gts: &[Bbox], iou_threshold: f64) -> f64 {
    average_precision_matched(&[iou_input(preds, gts)], iou_threshold).0
}

/// Detection results of a dataset: per-class AP averaged over thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    /// Mean over classes present in the ground truth and over thresholds;
    /// `None` when the ground truth has no boxes at all.
    pub map: Option<f64>,
    /// Per class, the AP averaged over thresholds; `None` for classes
    /// absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Counts summed over classes, one entry per threshold.
    pub counts: Vec<ThresholdCounts>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub iou_threshold: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

/// `images[i] = (detections, gt boxes)`.
pub fn mean_ap(images: &[(Vec<Detection>, Vec<BoxAnnotation>)], num_classes: usize, thresholds: &[f64]) -> MapResult {
    let mut per_class = vec![None; num_classes];
    let mut counts: Vec<ThresholdCounts> = thresholds
        .iter()
        .map(|&t| ThresholdCounts {
            iou_threshold: t,
            counts: Counts::default(),
        })
        .collect();
    for (c, slot) in per_class.iter_mut().enumerate() {
        let inputs: Vec<MatchInput> = images
            .iter()
            .map(|(dets, gts)| {
                let p: Vec<(f64, Bbox)> = dets.iter().filter(|d| d.class == c).map(|d| (d.score, d.bbox())).collect();
                let g: Vec<Bbox> = gts.iter().filter(|b| b.class == c).map(|b| b.bbox()).collect();
                iou_input(&p, &g)
            })
            .collect();
        if inputs.iter().all(|i| i.num_gt == 0) {
            continue;
        }
        let mut sum = 0.0;
        for (ti, &t) in thresholds.iter().enumerate() {
            let (ap, k) = average_precision_matched(&inputs, t);
            sum += ap;
            counts[ti].counts.tp += k.tp;
            counts[ti].counts.fp += k.fp;
            counts[ti].counts.fn_ += k.fn_;
        }
        *slot = Some(sum / thresholds.len().max(1) as f64);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    MapResult { map, per_class, counts }
}

/// Pixel confusion counts, `classes × classes`, indexed `[gt][pred]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegConfusion {
    classes: usize,
    counts: Vec<u64>,
}

impl SegConfusion {
    pub fn new(classes: usize) -> Self {
        SegConfusion {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Ids at or beyond the class count are ignored.
    pub fn add(&mut self, pred: &[u16], gt: &[u16]) {
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p < self.classes && g < self.classes {
                self.counts[g * self.classes + p] += 1;
            }
        }
    }

    /// IoU per class; `None` where the class occurs in neither map.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let n = self.classes;
        (0..n)
            .map(|c| {
                let inter = self.counts[c * n + c];
                let gt: u64 = self.counts[c * n..(c + 1) * n].iter().sum();
                let pred: u64 = (0..n).map(|g| self.counts[g * n + c]).sum();
                let union = gt + pred - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Option<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// mIoU of one pair of maps over `num_classes` foreground classes plus
/// background.
pub fn seg_miou(pred: &[u16], gt: &[u16], num_classes: usize) -> f64 {
    let mut conf = SegConfusion::new(num_classes + 1);
    conf.add(pred, gt);
    conf.miou().unwrap_or(1.0)
}

/// Ground truth of one person: its box and keypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct GtPerson {
    pub bbox: Bbox,
    pub joints: Vec<(f64, f64, bool)>,
}

pub fn gt_persons(ann: &SceneAnnotation) -> Vec<GtPerson> {
    ann.persons
        .iter()
        .map(|p| GtPerson {
            bbox: ann.boxes[p.box_index].bbox(),
            joints: p.keypoints.iter().map(|k| (k.x, k.y, k.visible)).collect(),
        })
        .collect()
}

/// Greedy IoU ≥ 0.5 matching of predicted to ground-truth persons in score
/// order. Returns, per GT, the index of its prediction.
fn match_persons(preds: &[PoseInstance], gts: &[GtPerson]) -> Vec<Option<usize>> {
    let input = MatchInput {
        scores: preds.iter().map(|p| p.detection.score).collect(),
        sim: preds.iter().map(|p| gts.iter().map(|g| box_iou(p.detection.bbox(), g.bbox)).collect()).collect(),
        num_gt: gts.len(),
    };
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| input.scores[b].partial_cmp(&input.scores[a]).unwrap_or(Ordering::Equal));
    let mut owner = vec![None; gts.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &s) in input.sim[p].iter().enumerate() {
            if owner[g].is_none() && s >= 0.5 && best.is_none_or(|(_, bs)| s > bs) {
                best = Some((g, s));
            }
        }
        if let Some((g, _)) = best {
            owner[g] = Some(p);
        }
    }
    owner
}

/// Correct and visible joint counts; PCK is their ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PckCounts {
    pub correct: usize,
    pub visible: usize,
}

impl PckCounts {
    pub fn pck(&self) -> Option<f64> {
        (self.visible > 0).then(|| self.correct as f64 / self.visible as f64)
    }
}

/// Joints within `alpha · sqrt(gt box area)` of a visible GT joint, for one
/// image.
pub fn pose_pck_counts(preds: &[PoseInstance], gts: &[GtPerson], alpha: f64) -> PckCounts {
    let owner = match_persons(preds, gts);
    let mut out = PckCounts::default();
    for (g, gt) in gts.iter().enumerate() {
        let tol = alpha * (gt.bbox[2] * gt.bbox[3]).sqrt();
        for (j, &(x, y, vis)) in gt.joints.iter().enumerate() {
            if !vis {
                continue;
            }
            out.visible += 1;
            let hit = owner[g]
                .and_then(|p| preds[p].joints.get(j))
                .is_some_and(|&(px, py)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() <= tol);
            out.correct += hit as usize;
        }
    }
    out
}

pub fn pose_pck(preds: &[PoseInstance], gts: &[GtPerson], alpha: f64) -> f64 {
    pose_pck_counts(preds, gts, alpha).pck().unwrap_or(1.0)
}

/// Object keypoint similarity with one sigma for every joint.
pub fn oks(pred: &[(f64, f64)], gt: &GtPerson, sigma: f64) -> f64 {
    let area = gt.bbox[2] * gt.bbox[3];
    let k2 = (2.0 * sigma).powi(2);
    let mut sum = 0.0;
    let mut n = 0;
    for (&(px, py), &(x, y, vis)) in pred.iter().zip(&gt.joints) {
        if !vis {
            continue;
        }
        let d2 = (px - x).powi(2) + (py - y).powi(2);
        sum += (-d2 / (2.0 * area * k2 + f64::EPSILON)).exp();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub tasks: TaskSet,
    pub num_classes: usize,
    pub iou_thresholds: Vec<f64>,
    pub pck_alpha: f64,
    /// When set, pose is additionally scored by OKS mAP with this sigma.
    pub oks_sigma: Option<f64>,
}

impl MetricConfig {
    pub fn new(tasks: TaskSet, num_classes: usize) -> Self {
        MetricConfig {
            tasks,
            num_classes,
            iou_thresholds: coco_thresholds(),
            pck_alpha: 0.2,
            oks_sigma: None,
        }
    }
}

/// Decoded predictions of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImagePrediction {
    pub detections: Vec<Detection>,
    pub poses: Vec<PoseInstance>,
    /// Class map at `seg_resolution²`.
    pub seg: Option<Vec<u16>>,
    pub seg_resolution: usize,
}

/// Dataset-level metrics. Tasks that were not evaluated are `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seg_miou: Option<f64>,
    pub det_map: Option<f64>,
    pub det_map50: Option<f64>,
    pub pose_pck: Option<f64>,
    pub pose_oks_map: Option<f64>,
    pub det_per_class_ap: Option<Vec<Option<f64>>>,
    pub seg_per_class_iou: Option<Vec<Option<f64>>>,
    pub det_counts: Option<Vec<ThresholdCounts>>,
    pub pose_counts: Option<PckCounts>,
    pub images: usize,
}

/// Accumulates images, then reduces them in insertion order.
#[derive(Clone, Debug)]
pub struct Evaluator {
    cfg: MetricConfig,
    det: Vec<(Vec<Detection>, Vec<BoxAnnotation>)>,
    conf: SegConfusion,
    pck: PckCounts,
    oks_inputs: Vec<MatchInput>,
    images: usize,
}

impl Evaluator {
    pub fn new(cfg: MetricConfig) -> Self {
        let conf = SegConfusion::new(cfg.num_classes + 1);
        Evaluator {
            cfg,
            det: Vec::new(),
            conf,
            pck: PckCounts::default(),
            oks_inputs: Vec::new(),
            images: 0,
        }
    }

    pub fn add(&mut self, pred: &ImagePrediction, gt: &SceneAnnotation) {
        self.images += 1;
        if self.cfg.tasks.contains(&Task::Detection) {
            self.det.push((pred.detections.clone(), gt.boxes.clone()));
        }
        if self.cfg.tasks.contains(&Task::Segmentation) {
            if let Some(seg) = &pred.seg {
                let s = pred.seg_resolution;
                let gt_seg = resample_seg(&gt.seg_map, gt.height, gt.width, s);
                self.conf.add(seg, &gt_seg);
            }
        }
        if self.cfg.tasks.contains(&Task::Pose) {
            let persons = gt_persons(gt);
            let c = pose_pck_counts(&pred.poses, &persons, self.cfg.pck_alpha);
            self.pck.correct += c.correct;
            self.pck.visible += c.visible;
            if let Some(sigma) = self.cfg.oks_sigma {
                self.oks_inputs.push(MatchInput {
                    scores: pred.poses.iter().map(|p| p.detection.score).collect(),
                    sim: pred.poses.iter().map(|p| persons.iter().map(|g| oks(&p.joints, g, sigma)).collect()).collect(),
                    num_gt: persons.len(),
                });
            }
        }
    }

    pub fn finish(&self) -> MetricReport {
        let mut r = MetricReport {
            images: self.images,
            ..MetricReport::default()
        };
        if self.cfg.tasks.contains(&Task::Detection) {
            let full = mean_ap(&self.det, self.cfg.num_classes, &self.cfg.iou_thresholds);
            let at50 = mean_ap(&self.det, self.cfg.num_classes, &[0.5]);
            r.det_map = full.map;
            r.det_map50 = at50.map;
            r.det_per_class_ap = Some(full.per_class);
            r.det_counts = Some(full.counts);
        }
        if self.cfg.tasks.contains(&Task::Segmentation) {
            r.seg_miou = self.conf.miou();
            r.seg_per_class_iou = Some(self.conf.per_class_iou());
        }
        if self.cfg.tasks.contains(&Task::Pose) {
            r.pose_pck = self.pck.pck();
            r.pose_counts = Some(self.pck);
            if self.cfg.oks_sigma.is_some() {
                let aps: Vec<f64> = coco_thresholds()
                    .into_iter()
                    .map(|t| average_precision_matched(&self.oks_inputs, t).0)
                    .collect();
                let any_gt = self.oks_inputs.iter().any(|i| i.num_gt > 0);
                r.pose_oks_map = any_gt.then(|| aps.iter().sum::<f64>() / aps.len() as f64);
            }
        }
        r
    }
}

/// Person detections only; used when scoring pose against person boxes.
pub fn person_detections(dets: &[Detection]) -> Vec<Detection> {
    dets.iter().filter(|d| d.class == PERSON_CLASS).copied().collect()
}
