use super::annotation::{SceneAnnotation, PERSON_CLASS};
use super::gaussian::{gaussian_radius, render_gaussian, MIN_OVERLAP};
use crate::error::{Error, Result};
use crate::model::{HeadConfig, Task};

/// Detection targets on the `h × w` feature grid, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTargets {
    /// `[C, h, w]`
    pub center: Vec<f64>,
    /// `[2, h, w]`, (width, height) in feature pixels.
    pub size: Vec<f64>,
    /// `[2, h, w]`, (x, y) fractional part of the center.
    pub offset: Vec<f64>,
    /// `[h, w]`
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseTargets {
    /// `[K, h, w]`
    pub heatmap: Vec<f64>,
    /// `[2, h, w]`
    pub offset: Vec<f64>,
    /// `[h, w]`
    pub offset_mask: Vec<bool>,
    /// `[2K, h, w]`; channels `2j`, `2j + 1` hold joint `j` relative to the
    /// person's center cell, in feature pixels.
    pub joints: Vec<f64>,
    /// `[K, h, w]`; joint `j` is supervised at the center cell iff visible.
    pub joint_mask: Vec<bool>,
}

/// Training targets of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTargets {
    pub feat_h: usize,
    pub feat_w: usize,
    pub num_classes: usize,
    pub num_keypoints: usize,
    pub seg_resolution: usize,
    pub detection: Option<DetectionTargets>,
    pub pose: Option<PoseTargets>,
    /// `seg_resolution²` class ids.
    pub segmentation: Option<Vec<u16>>,
    /// Same-class boxes or keypoints that landed on an occupied cell.
    pub collisions: usize,
}

/// Integer cell and fractional offset of an input-pixel coordinate.
fn cell_of(v: f64, stride: usize, cells: usize) -> (usize, f64) {
    let f = v / stride as f64;
    let c = (f.floor().max(0.0) as usize).min(cells - 1);
    (c, f - c as f64)
}

/// Nearest-neighbour resample of a class map to `s × s`.
pub fn resample_seg(map: &[u16], h: usize, w: usize, s: usize) -> Vec<u16> {
    let mut out = vec![0u16; s * s];
    for oy in 0..s {
        let sy = (((oy as f64 + 0.5) * h as f64 / s as f64) as usize).min(h - 1);
        for ox in 0..s {
            let sx = (((ox as f64 + 0.5) * w as f64 / s as f64) as usize).min(w - 1);
            out[oy * s + ox] = map[sy * w + sx];
        }
    }
    out
}

/// Builds the targets for every task in `cfg`. Keypoints are ignored when
/// pose is off.
pub fn encode_targets(ann: &SceneAnnotation, cfg: &HeadConfig) -> Result<EncodedTargets> {
    let stride = cfg.output_stride;
    if ann.height % stride != 0 || ann.width % stride != 0 || ann.height == 0 || ann.width == 0 {
        return Err(Error::invalid(format!(
            "image {}x{} is not a positive multiple of stride {stride}",
            ann.width, ann.height
        )));
    }
    let (h, w) = (ann.height / stride, ann.width / stride);
    let plane = h * w;
    let c = cfg.num_classes;
    let k = cfg.num_keypoints;
    for (i, b) in ann.boxes.iter().enumerate() {
        if b.class >= c {
            return Err(Error::invalid(format!("box {i}: class {} >= num_classes {c}", b.class)));
        }
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::invalid(format!("box {i}: non-positive size")));
        }
    }
    if cfg.has(Task::Pose) {
        for (pi, p) in ann.persons.iter().enumerate() {
            if p.keypoints.len() != k {
                return Err(Error::invalid(format!(
                    "person {pi}: {} keypoints, model expects {k}",
                    p.keypoints.len()
                )));
            }
            match ann.boxes.get(p.box_index) {
                Some(b) if b.class == PERSON_CLASS => {}
                _ => return Err(Error::invalid(format!("person {pi}: box {} is not a person box", p.box_index))),
            }
        }
    }

    let mut collisions = 0;
    // (class, cell) → area of the box whose regression targets are stored.
    let mut owner_area: Vec<Option<f64>> = vec![None; plane];
    let mut owner_class: Vec<Vec<bool>> = vec![vec![false; plane]; c];
    let mut cells = Vec::with_capacity(ann.boxes.len());
    let mut det = DetectionTargets {
        center: vec![0.0; c * plane],
        size: vec![0.0; 2 * plane],
        offset: vec![0.0; 2 * plane],
        mask: vec![false; plane],
    };
    for b in &ann.boxes {
        let (ix, ox) = cell_of(b.cx, stride, w);
        let (iy, oy) = cell_of(b.cy, stride, h);
        let (fw, fh) = (b.w / stride as f64, b.h / stride as f64);
        let r = gaussian_radius(fh, fw, MIN_OVERLAP)?;
        cells.push((ix, iy, r));
        let cell = iy * w + ix;
        render_gaussian(&mut det.center[b.class * plane..(b.class + 1) * plane], h, w, ix, iy, r);
        if std::mem::replace(&mut owner_class[b.class][cell], true) {
            collisions += 1;
        }
        let area = b.area();
        if owner_area[cell].is_some_and(|a| a >= area) {
            continue;
        }
        owner_area[cell] = Some(area);
        det.size[cell] = fw;
        det.size[plane + cell] = fh;
        det.offset[cell] = ox;
        det.offset[plane + cell] = oy;
        det.mask[cell] = true;
    }

    let pose = if cfg.has(Task::Pose) {
        let mut p = PoseTargets {
            heatmap: vec![0.0; k * plane],
            offset: vec![0.0; 2 * plane],
            offset_mask: vec![false; plane],
            joints: vec![0.0; 2 * k * plane],
            joint_mask: vec![false; k * plane],
        };
        let mut joint_owner: Vec<Option<f64>> = vec![None; plane];
        for person in &ann.persons {
            let (cx, cy, r) = cells[person.box_index];
            let center = cy * w + cx;
            let area = ann.boxes[person.box_index].area();
            let claim = joint_owner[center].is_none_or(|a| a < area);
            if claim {
                joint_owner[center] = Some(area);
            }
            for (j, kp) in person.keypoints.iter().enumerate() {
                let (fx, fy) = (kp.x / stride as f64, kp.y / stride as f64);
                if claim {
                    p.joints[2 * j * plane + center] = fx - cx as f64;
                    p.joints[(2 * j + 1) * plane + center] = fy - cy as f64;
                    p.joint_mask[j * plane + center] = kp.visible;
                }
                if !kp.visible {
                    continue;
                }
                let (jx, ox) = cell_of(kp.x, stride, w);
                let (jy, oy) = cell_of(kp.y, stride, h);
                let cell = jy * w + jx;
                render_gaussian(&mut p.heatmap[j * plane..(j + 1) * plane], h, w, jx, jy, r);
                if std::mem::replace(&mut p.offset_mask[cell], true) {
                    collisions += 1;
                }
                p.offset[cell] = ox;
                p.offset[plane + cell] = oy;
            }
        }
        Some(p)
    } else {
        None
    };

    let segmentation = cfg
        .has(Task::Segmentation)
        .then(|| resample_seg(&ann.seg_map, ann.height, ann.width, cfg.seg_resolution));

    Ok(EncodedTargets {
        feat_h: h,
        feat_w: w,
        num_classes: c,
        num_keypoints: k,
        seg_resolution: cfg.seg_resolution,
        detection: cfg.has(Task::Detection).then_some(det),
        pose,
        segmentation,
        collisions,
    })
}
