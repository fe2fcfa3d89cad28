//! Deterministic synthetic scenes.
//!
//! Class 0 is a stick figure carrying keypoints; every other class is a
//! filled shape family (rectangle, ellipse, triangle, cycling). Each scene
//! is a pure function of the config and its index.

mod coco;
mod io;
mod raster;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{BoxAnnotation, Keypoint, PersonKeypoints, SceneAnnotation, PERSON_CLASS};
use crate::error::{Error, Result};
use crate::model::splitmix64;
use crate::tensor::Tensor;

pub use coco::{import_coco, ImportReport};
pub use io::{
    dataset_from_json, dataset_to_json, load_annotations, read_ppm, rle_decode, rle_encode, save_annotations,
    write_ppm, decode_ppm, encode_ppm, read_scenes, write_scenes, AnnotatedImage, Dataset, ANNOTATION_FILE,
    ANNOTATION_VERSION,
};

/// Joint names in annotation order; the first `K` are annotated.
pub const JOINT_NAMES: [&str; 11] = [
    "head",
    "left_hand",
    "right_hand",
    "left_foot",
    "right_foot",
    "neck",
    "pelvis",
    "left_elbow",
    "right_elbow",
    "left_knee",
    "right_knee",
];

const FLIP_PAIRS: [(usize, usize); 4] = [(1, 2), (3, 4), (7, 8), (9, 10)];

/// Left/right joint pairs among the first `k` joints.
pub fn flip_pairs(k: usize) -> Vec<(usize, usize)> {
    FLIP_PAIRS.iter().copied().filter(|&(_, b)| b < k).collect()
}

/// Limbs drawn for every figure, as joint index pairs.
pub const SKELETON: [(usize, usize); 10] = [
    (0, 5),
    (5, 6),
    (5, 7),
    (7, 1),
    (5, 8),
    (8, 2),
    (6, 9),
    (9, 3),
    (6, 10),
    (10, 4),
];

/// Cell size used by the no-collision guarantee.
pub const COLLISION_STRIDE: usize = 4;
/// An object may lose at most this share of its pixels to later objects.
pub const MAX_OCCLUSION: f64 = 0.4;
const PLACEMENT_TRIES: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub max_objects: usize,
    pub num_keypoints: usize,
    pub seed: u64,
    pub scenes: usize,
    /// Distinct center cells for all boxes and distinct cells for all
    /// keypoints, at stride 4.
    pub no_collision: bool,
    /// Share of persons that carry keypoint annotations.
    pub pose_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            height: 64,
            width: 64,
            num_classes: 4,
            max_objects: 4,
            num_keypoints: 5,
            seed: 0,
            scenes: 100,
            no_collision: true,
            pose_fraction: 1.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_keypoints == 0 || self.max_objects == 0 {
            return Err(Error::Config("classes, keypoints and max objects must be at least 1".into()));
        }
        if self.num_keypoints > JOINT_NAMES.len() {
            return Err(Error::Config(format!(
                "stick figures have {} joints, {} requested",
                JOINT_NAMES.len(),
                self.num_keypoints
            )));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!("image {}x{} is smaller than 16x16", self.width, self.height)));
        }
        if !(0.0..=1.0).contains(&self.pose_fraction) {
            return Err(Error::Config(format!("pose fraction {} outside [0, 1]", self.pose_fraction)));
        }
        Ok(())
    }
}

/// An RGB image `[3, H, W]` in `[0, 1]` with its annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Tensor<f32>,
    pub annotation: SceneAnnotation,
}

impl Scene {
    /// Mirror image and annotation; left/right keypoints trade places.
    pub fn flip_horizontal(&self) -> Scene {
        let (_, h, w) = (3, self.annotation.height, self.annotation.width);
        let mut data = self.image.data().to_vec();
        for row in data.chunks_exact_mut(w) {
            row.reverse();
        }
        let k = self.annotation.persons.first().map_or(0, |p| p.keypoints.len());
        Scene {
            image: Tensor::new(vec![3, h, w], data).expect("same shape"),
            annotation: self.annotation.flip_horizontal(&flip_pairs(k)),
        }
    }
}

/// Rounds to the six decimals used by the annotation format.
fn fixed(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

struct Object {
    class: usize,
    pixels: Vec<usize>,
    joints: Option<Vec<(f64, f64)>>,
    color: [f32; 3],
}

const CLASS_COLORS: [[f32; 3]; 8] = [
    [0.90, 0.75, 0.20],
    [0.20, 0.45, 0.90],
    [0.85, 0.20, 0.25],
    [0.20, 0.75, 0.35],
    [0.70, 0.30, 0.80],
    [0.95, 0.55, 0.15],
    [0.15, 0.80, 0.80],
    [0.60, 0.60, 0.60],
];

fn scene_rng(cfg: &DatasetConfig, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ splitmix64(index as u64 ^ 0x5eed_0f_5ce4e)))
}

/// Stick figure joints in all eleven slots, in input pixels.
fn figure_joints(rng: &mut ChaCha8Rng, x0: f64, y0: f64, fw: f64, fh: f64) -> Vec<(f64, f64)> {
    let mut j = |u: f64, v: f64, jitter: f64| {
        let du = rng.random_range(-jitter..=jitter);
        let dv = rng.random_range(-jitter..=jitter);
        (fixed(x0 + (u + du) * fw), fixed(y0 + (v + dv) * fh))
    };
    let head = j(0.5, 0.1, 0.02);
    let left_hand = j(0.88, 0.48, 0.08);
    let right_hand = j(0.12, 0.48, 0.08);
    let left_foot = j(0.72, 0.95, 0.04);
    let right_foot = j(0.28, 0.95, 0.04);
    let neck = j(0.5, 0.24, 0.01);
    let pelvis = j(0.5, 0.58, 0.02);
    let left_elbow = j(0.7, 0.36, 0.05);
    let right_elbow = j(0.3, 0.36, 0.05);
    let left_knee = j(0.6, 0.77, 0.04);
    let right_knee = j(0.4, 0.77, 0.04);
    vec![
        head, left_hand, right_hand, left_foot, right_foot, neck, pelvis, left_elbow, right_elbow, left_knee,
        right_knee,
    ]
}

fn jitter_color(rng: &mut ChaCha8Rng, base: [f32; 3]) -> [f32; 3] {
    base.map(|c| (c + rng.random_range(-0.08f32..=0.08)).clamp(0.0, 1.0))
}

/// Draws one candidate object; `None` when it does not fit the image.
fn draw_object(rng: &mut ChaCha8Rng, cfg: &DatasetConfig, class: usize) -> Option<Object> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let side = h.min(w);
    let color = jitter_color(rng, CLASS_COLORS[class % CLASS_COLORS.len()]);
    if class == PERSON_CLASS {
        let fh = side * rng.random_range(0.35..0.6);
        let fw = fh * rng.random_range(0.5..0.7);
        let x0 = rng.random_range(0.0..(w - fw).max(1.0));
        let y0 = rng.random_range(0.0..(h - fh).max(1.0));
        let joints = figure_joints(rng, x0, y0, fw, fh);
        let thick = (0.045 * fh).max(1.0);
        let head_r = (0.09 * fh).max(1.5);
        let pixels = raster::stick_figure(cfg.height, cfg.width, &joints, &SKELETON, thick, head_r)?;
        return Some(Object { class, pixels, joints: Some(joints), color });
    }
    let bw = side * rng.random_range(0.18..0.42);
    let bh = side * rng.random_range(0.18..0.42);
    let cx = rng.random_range(bw / 2.0..w - bw / 2.0);
    let cy = rng.random_range(bh / 2.0..h - bh / 2.0);
    let pixels = match (class - 1) % 3 {
        0 => raster::rectangle(cfg.height, cfg.width, cx, cy, bw, bh),
        1 => raster::ellipse(cfg.height, cfg.width, cx, cy, bw / 2.0, bh / 2.0),
        _ => {
            let apex = cx + rng.random_range(-0.4..0.4) * bw;
            let tri = [(apex, cy - bh / 2.0), (cx - bw / 2.0, cy + bh / 2.0), (cx + bw / 2.0, cy + bh / 2.0)];
            raster::triangle(cfg.height, cfg.width, &tri)
        }
    }?;
    Some(Object { class, pixels, joints: None, color })
}

/// Tight pixel bounds as a center/extent box.
fn bounds(pixels: &[usize], width: usize) -> BoxAnnotation {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &p in pixels {
        let (y, x) = (p / width, p % width);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    BoxAnnotation {
        class: 0,
        cx: (x0 + x1) as f64 / 2.0,
        cy: (y0 + y1) as f64 / 2.0,
        w: (x1 - x0) as f64,
        h: (y1 - y0) as f64,
    }
}

fn cell(x: f64, y: f64) -> (usize, usize) {
    let s = COLLISION_STRIDE as f64;
    ((x / s).floor() as usize, (y / s).floor() as usize)
}

/// Scene `index` of the stream described by `cfg`.
pub fn generate_scene(cfg: &DatasetConfig, index: usize) -> Result<Scene> {
    cfg.validate()?;
    if index >= cfg.scenes {
        return Err(Error::invalid(format!("scene index {index} >= scene count {}", cfg.scenes)));
    }
    let mut rng = scene_rng(cfg, index);
    let (h, w) = (cfg.height, cfg.width);
    let plane = h * w;
    let target = rng.random_range(1..=cfg.max_objects);

    let mut owner: Vec<Option<usize>> = vec![None; plane];
    let mut objects: Vec<Object> = Vec::new();
    let mut boxes: Vec<BoxAnnotation> = Vec::new();
    let mut center_cells = Vec::new();
    let mut joint_cells = Vec::new();
    let mut visible: Vec<usize> = Vec::new();
    for _ in 0..target {
        let class = rng.random_range(0..cfg.num_classes);
        for _ in 0..PLACEMENT_TRIES {
            let Some(obj) = draw_object(&mut rng, cfg, class) else { continue };
            let mut b = bounds(&obj.pixels, w);
            b.class = class;
            let c = cell(b.cx, b.cy);
            let jc: Vec<(usize, usize)> = obj
                .joints
                .as_ref()
                .map(|j| j[..cfg.num_keypoints].iter().map(|&(x, y)| cell(x, y)).collect())
                .unwrap_or_default();
            if cfg.no_collision {
                let mut uniq = jc.clone();
                uniq.sort_unstable();
                uniq.dedup();
                if center_cells.contains(&c) || uniq.len() != jc.len() || jc.iter().any(|j| joint_cells.contains(j)) {
                    continue;
                }
            }
            // Earlier objects must keep most of their pixels.
            let id = objects.len();
            let mut lost = vec![0usize; id];
            for &p in &obj.pixels {
                if let Some(o) = owner[p] {
                    lost[o] += 1;
                }
            }
            let too_much = (0..id).any(|o| {
                let total = objects[o].pixels.len() as f64;
                (total - (visible[o] - lost[o]) as f64) / total > MAX_OCCLUSION
            });
            if too_much {
                continue;
            }
            for &p in &obj.pixels {
                if let Some(o) = owner[p] {
                    visible[o] -= 1;
                }
                owner[p] = Some(id);
            }
            visible.push(obj.pixels.len());
            center_cells.push(c);
            joint_cells.extend(jc);
            boxes.push(b);
            objects.push(obj);
            break;
        }
    }

    let mut image = vec![0f32; 3 * plane];
    let base: [f32; 3] = [rng.random_range(0.25..0.55), rng.random_range(0.25..0.55), rng.random_range(0.25..0.55)];
    let tilt = rng.random_range(-0.15f32..0.15);
    for y in 0..h {
        for x in 0..w {
            let g = tilt * (y as f32 / h as f32 - 0.5);
            for (ch, b) in base.iter().enumerate() {
                let n = rng.random_range(-0.06f32..=0.06);
                image[ch * plane + y * w + x] = (b + g + n).clamp(0.0, 1.0);
            }
        }
    }
    let mut seg_map = vec![0u16; plane];
    for (p, o) in owner.iter().enumerate() {
        if let Some(o) = *o {
            let obj = &objects[o];
            seg_map[p] = obj.class as u16 + 1;
            for ch in 0..3 {
                let n = rng.random_range(-0.04f32..=0.04);
                image[ch * plane + p] = (obj.color[ch] + n).clamp(0.0, 1.0);
            }
        }
    }

    let mut persons = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        let Some(joints) = &obj.joints else { continue };
        if cfg.pose_fraction < 1.0 && rng.random::<f64>() >= cfg.pose_fraction {
            continue;
        }
        let keypoints = joints[..cfg.num_keypoints]
            .iter()
            .map(|&(x, y)| {
                let p = (y as usize).min(h - 1) * w + (x as usize).min(w - 1);
                Keypoint { x, y, visible: owner[p] == Some(i) }
            })
            .collect();
        persons.push(PersonKeypoints { box_index: i, keypoints });
    }

    // 8-bit levels, so a scene read back from PPM is bit-identical.
    for v in &mut image {
        *v = (*v * 255.0).round() / 255.0;
    }
    let image = Tensor::new(vec![3, h, w], image)?;
    Ok(Scene {
        image,
        annotation: SceneAnnotation {
            height: h,
            width: w,
            boxes,
            persons,
            seg_map,
        },
    })
}

/// Every scene of the stream.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Scene>> {
    (0..cfg.scenes).map(|i| generate_scene(cfg, i)).collect()
}
