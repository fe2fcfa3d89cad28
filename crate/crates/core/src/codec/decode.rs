use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::annotation::PERSON_CLASS;
use crate::error::{Error, Result};
use crate::model::HeadOutputs;
use crate::tensor::{kernels, Real, Tensor};

/// Confidence reported for a joint that kept its regressed position.
pub const FALLBACK_CONFIDENCE: f64 = 0.1;
/// Keypoint peaks are searched inside the detection box scaled by this.
pub const SNAP_EXPANSION: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub top_k: usize,
    pub score_threshold: f64,
    pub keypoint_threshold: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            top_k: 100,
            score_threshold: 0.3,
            keypoint_threshold: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Feature cell `(x, y)` the detection was read from.
    pub cell: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance {
    pub detection: Detection,
    /// `(x, y)` in input pixels.
    pub joints: Vec<(f64, f64)>,
    pub confidence: Vec<f64>,
}

/// A local maximum of one heatmap channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub channel: usize,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Cells equal to their 3×3 neighbourhood maximum, sorted by score
/// descending then (channel, row, col) ascending.
pub fn find_peaks(maps: &[f64], channels: usize, h: usize, w: usize) -> Vec<Peak> {
    let (pooled, _) = kernels::max_pool3_forward(maps, channels, h, w);
    let mut peaks: Vec<Peak> = maps
        .iter()
        .zip(&pooled)
        .enumerate()
        .filter(|(_, (v, m))| v == m)
        .map(|(i, (&v, _))| Peak {
            channel: i / (h * w),
            row: i / w % h,
            col: i % w,
            score: v,
        })
        .collect();
    peaks.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then((a.channel, a.row, a.col).cmp(&(b.channel, b.row, b.col)))
    });
    peaks
}

/// One image of a batched map as f64, with its (channels, h, w).
fn image_plane<T: Real>(t: &Option<Tensor<T>>, image: usize, what: &str) -> Result<(Vec<f64>, usize, usize, usize)> {
    let t = t
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("outputs carry no {what}")))?;
    let (n, c, h, w) = crate::tensor::dims4(t.shape())?;
    if image >= n {
        return Err(Error::invalid(format!("image {image} out of range for batch of {n}")));
    }
    let len = c * h * w;
    let data = t.data()[image * len..(image + 1) * len]
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();
    Ok((data, c, h, w))
}

/// Boxes of image `image`: top-k peaks of the center heatmap, then score
/// thresholding. No suppression beyond the 3×3 peak test.
pub fn decode_detections<T: Real>(
    out: &HeadOutputs<T>,
    image: usize,
    params: &DecodeParams,
    stride: usize,
) -> Result<Vec<Detection>> {
    let (heat, c, h, w) = image_plane(&out.center_heatmap, image, "center heatmap")?;
    let (size, ..) = image_plane(&out.size_map, image, "size map")?;
    let (off, ..) = image_plane(&out.offset_map, image, "offset map")?;
    let plane = h * w;
    let s = stride as f64;
    let mut dets = Vec::new();
    for p in find_peaks(&heat, c, h, w).into_iter().take(params.top_k) {
        if p.score < params.score_threshold {
            break;
        }
        let cell = p.row * w + p.col;
        // A regressed size below one input pixel is floored there so that
        // every detection stays a proper box.
        dets.push(Detection {
            class: p.channel,
            score: p.score,
            cx: (p.col as f64 + off[cell]) * s,
            cy: (p.row as f64 + off[plane + cell]) * s,
            w: (size[cell] * s).max(1.0),
            h: (size[plane + cell] * s).max(1.0),
            cell: (p.col, p.row),
        });
    }
    Ok(dets)
}

/// Joints for every person-class detection of image `image`.
pub fn decode_poses<T: Real>(
    out: &HeadOutputs<T>,
    image: usize,
    detections: &[Detection],
    params: &DecodeParams,
    stride: usize,
) -> Result<Vec<PoseInstance>> {
    let persons: Vec<&Detection> = detections.iter().filter(|d| d.class == PERSON_CLASS).collect();
    if persons.is_empty() {
        return Ok(Vec::new());
    }
    let (heat, k, h, w) = image_plane(&out.keypoint_heatmap, image, "keypoint heatmap")?;
    let (off, ..) = image_plane(&out.keypoint_offset, image, "keypoint offset")?;
    let (reg, ..) = image_plane(&out.joint_regression, image, "joint regression")?;
    let plane = h * w;
    let s = stride as f64;

    let mut by_joint: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); k];
    for p in find_peaks(&heat, k, h, w) {
        if p.score < params.keypoint_threshold {
            break;
        }
        let cell = p.row * w + p.col;
        by_joint[p.channel].push((
            (p.col as f64 + off[cell]) * s,
            (p.row as f64 + off[plane + cell]) * s,
            p.score,
        ));
    }

    let mut poses = Vec::with_capacity(persons.len());
    for d in persons {
        let (cx, cy) = d.cell;
        let center = cy * w + cx;
        let half_w = d.w * SNAP_EXPANSION / 2.0;
        let half_h = d.h * SNAP_EXPANSION / 2.0;
        let (x0, x1, y0, y1) = (d.cx - half_w, d.cx + half_w, d.cy - half_h, d.cy + half_h);
        let mut joints = Vec::with_capacity(k);
        let mut confidence = Vec::with_capacity(k);
        for (j, peaks) in by_joint.iter().enumerate() {
            let rx = (cx as f64 + reg[2 * j * plane + center]) * s;
            let ry = (cy as f64 + reg[(2 * j + 1) * plane + center]) * s;
            let nearest = peaks
                .iter()
                .filter(|&&(px, py, _)| px >= x0 && px <= x1 && py >= y0 && py <= y1)
                .min_by(|a, b| {
                    let da = (a.0 - rx).powi(2) + (a.1 - ry).powi(2);
                    let db = (b.0 - rx).powi(2) + (b.1 - ry).powi(2);
                    da.partial_cmp(&db).unwrap_or(Ordering::Equal)
                });
            match nearest {
                Some(&(px, py, score)) => {
                    joints.push((px, py));
                    confidence.push(score);
                }
                None => {
                    joints.push((rx.clamp(x0, x1), ry.clamp(y0, y1)));
                    confidence.push(FALLBACK_CONFIDENCE);
                }
            }
        }
        poses.push(PoseInstance {
            detection: *d,
            joints,
            confidence,
        });
    }
    Ok(poses)
}

/// Per-pixel argmax over `[C+1, S, S]` probabilities; ties go to the lower id.
pub fn argmax_classes(probs: &[f64], channels: usize, plane: usize) -> Vec<u16> {
    (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..channels {
                if probs[c * plane + p] > probs[best * plane + p] {
                    best = c;
                }
            }
            best as u16
        })
        .collect()
}

/// Class-id map of image `image` at the segmentation resolution.
pub fn decode_segmentation<T: Real>(out: &HeadOutputs<T>, image: usize) -> Result<Vec<u16>> {
    let (probs, c, h, w) = image_plane(&out.seg_softmax, image, "segmentation output")?;
    Ok(argmax_classes(&probs, c, h * w))
}
