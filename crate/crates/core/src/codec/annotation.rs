use crate::error::{Error, Result};

/// Class id of the person-like class. Keypoints only attach to boxes of
/// this class.
pub const PERSON_CLASS: usize = 0;

/// Axis-aligned box in input pixels, by center and extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxAnnotation {
    pub class: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxAnnotation {
    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Keypoints of one person, attached to `boxes[box_index]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonKeypoints {
    pub box_index: usize,
    pub keypoints: Vec<Keypoint>,
}

/// Ground truth of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneAnnotation {
    pub height: usize,
    pub width: usize,
    pub boxes: Vec<BoxAnnotation>,
    pub persons: Vec<PersonKeypoints>,
    /// Row-major `height × width` class map; 0 is background and class
    /// `c` is stored as `c + 1`.
    pub seg_map: Vec<u16>,
}

/// Half-pixel slack allowed on box and keypoint bounds.
const BOUNDS_SLACK: f64 = 1e-9;

impl SceneAnnotation {
    pub fn empty(height: usize, width: usize) -> Self {
        SceneAnnotation {
            height,
            width,
            boxes: Vec::new(),
            persons: Vec::new(),
            seg_map: vec![0; height * width],
        }
    }

    pub fn keypoints_of(&self, box_index: usize) -> Option<&PersonKeypoints> {
        self.persons.iter().find(|p| p.box_index == box_index)
    }

    /// Checks the structural invariants; `num_classes` bounds box classes
    /// and segmentation ids.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        if self.seg_map.len() != self.width * self.height {
            return Err(Error::Validation(format!(
                "seg_map has {} pixels, image is {}x{}",
                self.seg_map.len(),
                self.width,
                self.height
            )));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.class >= num_classes {
                return Err(Error::Validation(format!("box {i}: class {} >= {num_classes}", b.class)));
            }
            if !(b.w > 0.0 && b.h > 0.0) {
                return Err(Error::Validation(format!("box {i}: non-positive size {}x{}", b.w, b.h)));
            }
            if b.x0() < -BOUNDS_SLACK || b.y0() < -BOUNDS_SLACK || b.x1() > w + BOUNDS_SLACK || b.y1() > h + BOUNDS_SLACK {
                return Err(Error::Validation(format!("box {i}: outside the {}x{} image", self.width, self.height)));
            }
        }
        let mut owners = vec![false; self.boxes.len()];
        for (pi, p) in self.persons.iter().enumerate() {
            let Some(b) = self.boxes.get(p.box_index) else {
                return Err(Error::Validation(format!("person {pi}: box index {} out of range", p.box_index)));
            };
            if b.class != PERSON_CLASS {
                return Err(Error::Validation(format!("person {pi}: box {} is not a person box", p.box_index)));
            }
            if std::mem::replace(&mut owners[p.box_index], true) {
                return Err(Error::Validation(format!("person {pi}: box {} already has keypoints", p.box_index)));
            }
            for (j, k) in p.keypoints.iter().enumerate() {
                if k.x < 0.0 || k.y < 0.0 || k.x > w || k.y > h || !k.x.is_finite() || !k.y.is_finite() {
                    return Err(Error::Validation(format!(
                        "person {pi}: keypoint {j} at ({}, {}) outside the {}x{} image",
                        k.x, k.y, self.width, self.height
                    )));
                }
            }
        }
        if let Some(&id) = self.seg_map.iter().find(|&&id| id as usize > num_classes) {
            return Err(Error::Validation(format!("seg_map id {id} > {num_classes}")));
        }
        Ok(())
    }

    /// Mirror left-right. Keypoint indices in `swap_pairs` exchange places
    /// so that "left" joints stay left from the figure's point of view.
    pub fn flip_horizontal(&self, swap_pairs: &[(usize, usize)]) -> SceneAnnotation {
        let w = self.width as f64;
        let boxes = self.boxes.iter().map(|b| BoxAnnotation { cx: w - b.cx, ..*b }).collect();
        let persons = self
            .persons
            .iter()
            .map(|p| {
                let mut kps: Vec<Keypoint> = p.keypoints.iter().map(|k| Keypoint { x: w - k.x, ..*k }).collect();
                for &(a, b) in swap_pairs {
                    if a < kps.len() && b < kps.len() {
                        kps.swap(a, b);
                    }
                }
                PersonKeypoints { box_index: p.box_index, keypoints: kps }
            })
            .collect();
        let mut seg_map = self.seg_map.clone();
        for row in seg_map.chunks_exact_mut(self.width) {
            row.reverse();
        }
        SceneAnnotation {
            height: self.height,
            width: self.width,
            boxes,
            persons,
            seg_map,
        }
    }
}
