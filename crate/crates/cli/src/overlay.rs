//! Saved predictions and the overlay drawn from them.
//!
//! Drawing order: segmentation blended at 50%, then box outlines, then
//! skeleton lines, then keypoint squares. All integer arithmetic after
//! rounding, so the same prediction file and image always give the same
//! bytes.

use anyhow::{bail, Result};
use mcn_core::codec::{Detection, PoseInstance, PERSON_CLASS};
use mcn_core::synth::{rle_decode, SKELETON};
use serde::{Deserialize, Serialize};

pub const PREDICTION_VERSION: &str = "1";

/// Segmentation ids index this directly (`id % 16`); box class `c` uses
/// entry `(c + 1) % 16` so the first class is not drawn in black.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [255, 255, 255],
];

const KEYPOINT_COLOR: [u8; 3] = PALETTE[15];

/// COCO's 17-joint skeleton, 0-based.
pub const COCO_SKELETON: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegPrediction {
    /// Side of the square class map.
    pub resolution: usize,
    /// Run-length encoded class map, `(id, length)` in row-major order.
    pub runs: Vec<(u16, usize)>,
}

/// What `infer` writes and `render` reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub version: String,
    pub width: usize,
    pub height: usize,
    pub tasks: Vec<String>,
    pub num_classes: usize,
    pub num_keypoints: usize,
    pub detections: Vec<Detection>,
    pub poses: Vec<PoseInstance>,
    pub seg: Option<SegPrediction>,
}

/// Edges drawn between the first `k` joints. 17 joints use the COCO
/// skeleton. Stick figures with `k` below the full joint set link each
/// joint to its nearest ancestor among the first `k`, rooted at the head,
/// so a 5-joint figure becomes a star around the head.
pub fn skeleton_edges(k: usize) -> Vec<(usize, usize)> {
    if k == 17 {
        return COCO_SKELETON.to_vec();
    }
    let n = SKELETON.len() + 1;
    if k > n {
        return Vec::new();
    }
    let mut parent = vec![usize::MAX; n];
    for &(p, c) in &SKELETON {
        parent[c] = p;
    }
    (1..k)
        .map(|j| {
            let mut a = parent[j];
            while a >= k {
                a = parent[a];
            }
            (a, j)
        })
        .collect()
}

struct Canvas<'a> {
    rgb: &'a mut [u8],
    w: usize,
    h: usize,
}

impl Canvas<'_> {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = 3 * (y as usize * self.w + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        for x in x0..=x1 {
            self.put(x, y0, c);
            self.put(x, y1, c);
        }
        for y in y0..=y1 {
            self.put(x0, y, c);
            self.put(x1, y, c);
        }
    }

    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

fn pixel(v: f64) -> i64 {
    // Far-off coordinates only need to stay off the canvas.
    v.floor().clamp(-1e9, 1e9) as i64
}

/// Draws `pred` over a packed RGB image of `pred.width × pred.height`.
pub fn render_overlay(rgb: &[u8], pred: &Prediction) -> Result<Vec<u8>> {
    let (w, h) = (pred.width, pred.height);
    if rgb.len() != 3 * w * h {
        bail!("image has {} bytes, prediction is for {w}x{h}", rgb.len());
    }
    let mut out = rgb.to_vec();

    if let Some(seg) = &pred.seg {
        let s = seg.resolution;
        if s == 0 {
            bail!("segmentation resolution is 0");
        }
        let map = rle_decode(&seg.runs, s * s)?;
        for y in 0..h {
            let sy = ((2 * y + 1) * s / (2 * h)).min(s - 1);
            for x in 0..w {
                let sx = ((2 * x + 1) * s / (2 * w)).min(s - 1);
                let c = PALETTE[map[sy * s + sx] as usize % 16];
                let i = 3 * (y * w + x);
                for ch in 0..3 {
                    out[i + ch] = ((out[i + ch] as u16 + c[ch] as u16) / 2) as u8;
                }
            }
        }
    }

    let mut canvas = Canvas { rgb: &mut out, w, h };
    for d in &pred.detections {
        let c = PALETTE[(d.class + 1) % 16];
        let x0 = pixel(d.cx - d.w / 2.0);
        let y0 = pixel(d.cy - d.h / 2.0);
        let x1 = pixel(d.cx + d.w / 2.0).max(x0);
        let y1 = pixel(d.cy + d.h / 2.0).max(y0);
        canvas.rect(x0, y0, x1, y1, c);
    }
    let edges = skeleton_edges(pred.num_keypoints);
    let limb = PALETTE[(PERSON_CLASS + 1) % 16];
    for p in &pred.poses {
        let pts: Vec<(i64, i64)> = p.joints.iter().map(|&(x, y)| (pixel(x), pixel(y))).collect();
        for &(a, b) in &edges {
            if let (Some(&pa), Some(&pb)) = (pts.get(a), pts.get(b)) {
                canvas.line(pa, pb, limb);
            }
        }
    }
    for p in &pred.poses {
        for &(x, y) in &p.joints {
            let (px, py) = (pixel(x), pixel(y));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    canvas.put(px + dx, py + dy, KEYPOINT_COLOR);
                }
            }
        }
    }
    Ok(out)
}
