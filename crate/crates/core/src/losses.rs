//! Loss terms of the multitask objective.
//!
//! `total = center + λ_size·size + off + keyp + keyp_off + λ_seg·seg`, where
//! `keyp` is the keypoint-heatmap focal loss plus `λ_joint` times the
//! center-to-joint regression L1.

use serde::{Deserialize, Serialize};

use crate::codec::EncodedTargets;
use crate::error::{Error, Result};
use crate::model::{HeadVars, Task, TaskSet};
use crate::tensor::kernels::PROB_EPS;
use crate::tensor::{Real, Tape, Var};

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_size: f64,
    pub lambda_seg: f64,
    pub lambda_joint: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_size: 0.1,
            lambda_seg: 5.0,
            lambda_joint: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_size, self.lambda_seg, self.lambda_joint];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-term loss values of one step. Terms of inactive tasks are 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub center: f64,
    pub size: f64,
    pub off: f64,
    pub keyp: f64,
    pub keyp_off: f64,
    pub seg: f64,
    pub total: f64,
    #[serde(skip)]
    pub active: TaskSet,
}

impl LossBreakdown {
    /// The weighted sum of the six terms, in equation order.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.center + w.lambda_size * self.size + self.off + self.keyp + self.keyp_off + w.lambda_seg * self.seg
    }

    pub fn is_active(&self, task: Task) -> bool {
        self.active.contains(&task)
    }

    /// `(name, value)` of each term, in log order.
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("center", self.center),
            ("size", self.size),
            ("off", self.off),
            ("keyp", self.keyp),
            ("keyp_off", self.keyp_off),
            ("seg", self.seg),
            ("total", self.total),
        ]
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("{what}: {got} values, expected {want}")));
    }
    Ok(())
}

/// Penalty-reduced focal loss and its gradient w.r.t. `pred`, normalized
/// by the number of cells where `gt == 1` (at least 1).
pub fn focal_value_and_grad<T: Real>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    check_len("focal target", gt.len(), pred.len())?;
    let eps = T::lit(PROB_EPS);
    let one = T::one();
    let peaks = gt.iter().filter(|&&g| g == one).count().max(1);
    let norm = T::lit(peaks as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        let inside = p > eps && p < one - eps;
        // NaN must survive the clamp so a diverged step is reported.
        let p = if p.is_nan() { p } else { p.max(eps).min(one - eps) };
        let (l, d) = if g == one {
            // −(1−p)^α log p
            let q = one - p;
            let qa = q.powi(FOCAL_ALPHA);
            (-qa * p.ln(), T::lit(FOCAL_ALPHA as f64) * q.powi(FOCAL_ALPHA - 1) * p.ln() - qa / p)
        } else {
            // −(1−g)^β p^α log(1−p)
            let w = (one - g).powi(FOCAL_BETA);
            let pa = p.powi(FOCAL_ALPHA);
            let lq = (one - p).ln();
            (
                -w * pa * lq,
                -w * (T::lit(FOCAL_ALPHA as f64) * p.powi(FOCAL_ALPHA - 1) * lq - pa / (one - p)),
            )
        };
        loss = loss + l;
        if inside {
            grad[i] = d / norm;
        }
    }
    Ok((loss / norm, grad))
}

/// Records the focal loss of heatmap `pred` against `gt` (same layout).
pub fn focal_loss<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Vec<T>) -> Result<Var> {
    focal_loss_scaled(tape, pred, gt, T::one())
}

/// As [`focal_loss`] with the backward rule multiplied by `grad_scale`.
/// Exists so self-tests can plant a wrong gradient and watch it get caught.
#[doc(hidden)]
pub fn focal_loss_scaled<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Vec<T>, grad_scale: T) -> Result<Var> {
    let (value, _) = focal_value_and_grad(tape.value(pred), &gt)?;
    Ok(tape.scalar_fn(pred, value, move |p, up| {
        let (_, g) = focal_value_and_grad(p, &gt).expect("length checked on record");
        g.into_iter().map(|d| d * up * grad_scale).collect()
    }))
}

/// Mask layout for [`masked_l1`]: `groups` mask planes per image, each
/// covering `channels / groups` consecutive prediction channels.
#[derive(Clone, Debug, PartialEq)]
pub struct L1Mask<T> {
    pub values: Vec<T>,
    pub groups: usize,
}

/// Σ over masked cells of |pred − gt| across channels, divided by
/// max(1, number of set mask entries). `pred` is `[N, D, h, w]`, `gt` the
/// same, `mask.values` is `[N, G, h, w]`.
pub fn masked_l1_value_and_grad<T: Real>(
    pred: &[T],
    gt: &[T],
    mask: &L1Mask<T>,
    shape: &[usize],
) -> Result<(T, Vec<T>)> {
    let (n, d, h, w) = crate::tensor::dims4(shape)?;
    let g = mask.groups;
    if g == 0 || d % g != 0 {
        return Err(Error::invalid(format!("{d} channels cannot be split into {g} mask groups")));
    }
    check_len("l1 target", gt.len(), pred.len())?;
    check_len("l1 mask", mask.values.len(), n * g * h * w)?;
    let plane = h * w;
    let per = d / g;
    let count = mask.values.iter().filter(|&&m| m != T::zero()).count().max(1);
    let norm = T::lit(count as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for b in 0..n {
        for ch in 0..d {
            let m = &mask.values[(b * g + ch / per) * plane..(b * g + ch / per + 1) * plane];
            let off = (b * d + ch) * plane;
            for (j, &mv) in m.iter().enumerate() {
                if mv == T::zero() {
                    continue;
                }
                let diff = pred[off + j] - gt[off + j];
                loss = loss + mv * diff.abs();
                let s = if diff > T::zero() {
                    T::one()
                } else if diff < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                grad[off + j] = mv * s / norm;
            }
        }
    }
    Ok((loss / norm, grad))
}

pub fn masked_l1<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Vec<T>, mask: L1Mask<T>) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    let (value, _) = masked_l1_value_and_grad(tape.value(pred), &gt, &mask, &shape)?;
    Ok(tape.scalar_fn(pred, value, move |p, up| {
        let (_, g) = masked_l1_value_and_grad(p, &gt, &mask, &shape).expect("shapes checked on record");
        g.into_iter().map(|d| d * up).collect()
    }))
}

/// Mean over pixels of −log max(p_gt, ε) for `[N, C+1, S, S]` probabilities.
pub fn seg_ce_value_and_grad<T: Real>(probs: &[T], gt: &[u16], shape: &[usize]) -> Result<(T, Vec<T>)> {
    let (n, c, h, w) = crate::tensor::dims4(shape)?;
    let plane = h * w;
    check_len("segmentation target", gt.len(), n * plane)?;
    if let Some(&id) = gt.iter().find(|&&id| id as usize >= c) {
        return Err(Error::invalid(format!("segmentation id {id} out of range for {c} channels")));
    }
    let eps = T::lit(PROB_EPS);
    let count = T::lit((n * plane).max(1) as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    for b in 0..n {
        for j in 0..plane {
            let i = (b * c + gt[b * plane + j] as usize) * plane + j;
            let p = probs[i];
            loss = loss - if p.is_nan() { p } else { p.max(eps).ln() };
            if p > eps {
                grad[i] = -T::one() / (p * count);
            }
        }
    }
    Ok((loss / count, grad))
}

pub fn seg_cross_entropy<T: Real>(tape: &mut Tape<T>, probs: Var, gt: Vec<u16>) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let (value, _) = seg_ce_value_and_grad(tape.value(probs), &gt, &shape)?;
    Ok(tape.scalar_fn(probs, value, move |p, up| {
        let (_, g) = seg_ce_value_and_grad(p, &gt, &shape).expect("shapes checked on record");
        g.into_iter().map(|d| d * up).collect()
    }))
}

/// Targets of a batch, concatenated image after image.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets<T> {
    pub batch: usize,
    pub center: Option<Vec<T>>,
    pub size: Option<Vec<T>>,
    pub offset: Option<Vec<T>>,
    pub reg_mask: Option<Vec<T>>,
    pub keypoint: Option<Vec<T>>,
    pub keypoint_offset: Option<Vec<T>>,
    pub keypoint_offset_mask: Option<Vec<T>>,
    pub joints: Option<Vec<T>>,
    pub joint_mask: Option<Vec<T>>,
    pub seg: Option<Vec<u16>>,
}

fn concat<T: Real, S>(items: &[S], f: impl Fn(&S) -> Option<&[f64]>) -> Option<Vec<T>> {
    let mut out = Vec::new();
    for s in items {
        out.extend(f(s)?.iter().map(|&v| T::lit(v)));
    }
    Some(out)
}

fn concat_mask<T: Real, S>(items: &[S], f: impl Fn(&S) -> Option<&[bool]>) -> Option<Vec<T>> {
    let mut out = Vec::new();
    for s in items {
        out.extend(f(s)?.iter().map(|&m| if m { T::one() } else { T::zero() }));
    }
    Some(out)
}

impl<T: Real> BatchTargets<T> {
    pub fn stack(items: &[EncodedTargets]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("cannot stack an empty batch"))?;
        for (i, t) in items.iter().enumerate() {
            let same = (t.feat_h, t.feat_w, t.num_classes, t.num_keypoints, t.seg_resolution)
                == (first.feat_h, first.feat_w, first.num_classes, first.num_keypoints, first.seg_resolution)
                && t.detection.is_some() == first.detection.is_some()
                && t.pose.is_some() == first.pose.is_some()
                && t.segmentation.is_some() == first.segmentation.is_some();
            if !same {
                return Err(Error::invalid(format!("targets of image {i} differ in layout from image 0")));
            }
        }
        let seg = items
            .iter()
            .map(|t| t.segmentation.as_deref())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Ok(BatchTargets {
            batch: items.len(),
            center: concat(items, |t| t.detection.as_ref().map(|d| d.center.as_slice())),
            size: concat(items, |t| t.detection.as_ref().map(|d| d.size.as_slice())),
            offset: concat(items, |t| t.detection.as_ref().map(|d| d.offset.as_slice())),
            reg_mask: concat_mask(items, |t| t.detection.as_ref().map(|d| d.mask.as_slice())),
            keypoint: concat(items, |t| t.pose.as_ref().map(|p| p.heatmap.as_slice())),
            keypoint_offset: concat(items, |t| t.pose.as_ref().map(|p| p.offset.as_slice())),
            keypoint_offset_mask: concat_mask(items, |t| t.pose.as_ref().map(|p| p.offset_mask.as_slice())),
            joints: concat(items, |t| t.pose.as_ref().map(|p| p.joints.as_slice())),
            joint_mask: concat_mask(items, |t| t.pose.as_ref().map(|p| p.joint_mask.as_slice())),
            seg,
        })
    }
}

fn need<'a, X>(v: &'a Option<X>, what: &str) -> Result<&'a X> {
    v.as_ref().ok_or_else(|| Error::invalid(format!("active task is missing {what}")))
}

/// Records every active term and their weighted sum. Returns the total's
/// handle and the breakdown read back from the tape.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    pred: &HeadVars,
    targets: &BatchTargets<T>,
    weights: &LossWeights,
    active: &TaskSet,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let mut parts: Vec<(Var, T)> = Vec::new();
    let mut bd = LossBreakdown {
        active: active.clone(),
        ..LossBreakdown::default()
    };
    let read = |tape: &Tape<T>, v: Var| tape.scalar(v).map(|x| x.to_f64().unwrap_or(f64::NAN));

    if active.contains(&Task::Detection) {
        let center = focal_loss(tape, *need(&pred.center_heatmap, "center heatmap")?, need(&targets.center, "center targets")?.clone())?;
        let mask = L1Mask {
            values: need(&targets.reg_mask, "regression mask")?.clone(),
            groups: 1,
        };
        let size = masked_l1(tape, *need(&pred.size_map, "size map")?, need(&targets.size, "size targets")?.clone(), mask.clone())?;
        let off = masked_l1(tape, *need(&pred.offset_map, "offset map")?, need(&targets.offset, "offset targets")?.clone(), mask)?;
        bd.center = read(tape, center)?;
        bd.size = read(tape, size)?;
        bd.off = read(tape, off)?;
        parts.extend([(center, T::one()), (size, T::lit(weights.lambda_size)), (off, T::one())]);
    }
    if active.contains(&Task::Pose) {
        let heat = focal_loss(tape, *need(&pred.keypoint_heatmap, "keypoint heatmap")?, need(&targets.keypoint, "keypoint targets")?.clone())?;
        let joint_mask = need(&targets.joint_mask, "joint mask")?.clone();
        let k = tape.shape(*need(&pred.keypoint_heatmap, "keypoint heatmap")?)[1];
        let joints = masked_l1(
            tape,
            *need(&pred.joint_regression, "joint regression")?,
            need(&targets.joints, "joint targets")?.clone(),
            L1Mask { values: joint_mask, groups: k },
        )?;
        let scaled = tape.scale(joints, T::lit(weights.lambda_joint));
        let keyp = tape.add(heat, scaled)?;
        let koff = masked_l1(
            tape,
            *need(&pred.keypoint_offset, "keypoint offset")?,
            need(&targets.keypoint_offset, "keypoint offset targets")?.clone(),
            L1Mask {
                values: need(&targets.keypoint_offset_mask, "keypoint offset mask")?.clone(),
                groups: 1,
            },
        )?;
        bd.keyp = read(tape, keyp)?;
        bd.keyp_off = read(tape, koff)?;
        parts.extend([(keyp, T::one()), (koff, T::one())]);
    }
    if active.contains(&Task::Segmentation) {
        let seg = seg_cross_entropy(tape, *need(&pred.seg_softmax, "segmentation output")?, need(&targets.seg, "segmentation targets")?.clone())?;
        bd.seg = read(tape, seg)?;
        parts.push((seg, T::lit(weights.lambda_seg)));
    }

    let mut total: Option<Var> = None;
    for (v, w) in parts {
        let term = if w == T::one() { v } else { tape.scale(v, w) };
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => return Err(Error::invalid("no active task to compute a loss for")),
    };
    bd.total = read(tape, total)?;
    Ok((total, bd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_single_pixel_values() {
        let (l, _) = focal_value_and_grad(&[0.5f64], &[1.0]).unwrap();
        assert!((l - 0.173_286_8).abs() < 1e-7);
        let (l, _) = focal_value_and_grad(&[0.5f64], &[0.0]).unwrap();
        assert!((l - 0.173_286_8).abs() < 1e-7);
    }

    #[test]
    fn focal_perfect_prediction_is_tiny() {
        let gt = [0.0, 0.3, 1.0, 0.6, 0.0];
        let pred: Vec<f64> = gt.iter().map(|&g| if g == 1.0 { 1.0 - 1e-6 } else { 1e-6 }).collect();
        assert!(focal_value_and_grad(&pred, &gt).unwrap().0 <= 1e-4);
    }

    #[test]
    fn l1_hand_sum_and_empty_mask() {
        let shape = [1, 2, 1, 2];
        let pred = [1.0f64, 5.0, 2.0, 7.0];
        let gt = [0.0; 4];
        let mask = L1Mask { values: vec![1.0, 0.0], groups: 1 };
        assert_eq!(masked_l1_value_and_grad(&pred, &gt, &mask, &shape).unwrap().0, 3.0);
        let none = L1Mask { values: vec![0.0, 0.0], groups: 1 };
        assert_eq!(masked_l1_value_and_grad(&pred, &gt, &none, &shape).unwrap().0, 0.0);
        assert_eq!(masked_l1_value_and_grad(&gt, &gt, &mask, &shape).unwrap().0, 0.0);
    }

    #[test]
    fn seg_ce_closed_forms() {
        let (l, _) = seg_ce_value_and_grad(&[0.2f64; 5 * 4], &[0, 1, 4, 2], &[1, 5, 2, 2]).unwrap();
        assert!((l - 1.609_437_9).abs() < 1e-7);
        let at = |p: f64| seg_ce_value_and_grad(&[1.0 - p, p], &[1], &[1, 2, 1, 1]).unwrap().0;
        assert!(at(0.1) > at(0.5) && at(0.5) > at(0.9));
        assert!(seg_ce_value_and_grad(&[0.5f64, 0.5], &[2], &[1, 2, 1, 1]).is_err());
    }

    #[test]
    fn weighted_total_example() {
        let bd = LossBreakdown {
            center: 1.0,
            size: 2.0,
            off: 0.5,
            seg: 0.3,
            ..LossBreakdown::default()
        };
        assert!((bd.weighted_total(&LossWeights::default()) - 3.2).abs() < 1e-12);
    }

    #[test]
    fn breakdown_serializes_with_log_field_names() {
        let v = serde_json::to_value(LossBreakdown::default()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 7);
        for k in ["center", "size", "off", "keyp", "keyp_off", "seg", "total"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
