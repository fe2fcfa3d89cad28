//! Annotation ⇄ tensor translation for anchor-free heads.
//!
//! Every box becomes a unit gaussian peak in its class channel at
//! `floor(center / stride)`, with size and sub-cell offset regressed at that
//! cell. Decoding reverses this by reading 3×3 local maxima.

mod annotation;
mod decode;
mod encode;
mod gaussian;

pub use annotation::{BoxAnnotation, Keypoint, PersonKeypoints, SceneAnnotation, PERSON_CLASS};
pub use decode::{
    argmax_classes, decode_detections, decode_poses, decode_segmentation, find_peaks, DecodeParams, Detection,
    Peak, PoseInstance, FALLBACK_CONFIDENCE, SNAP_EXPANSION,
};
pub use encode::{encode_targets, resample_seg, DetectionTargets, EncodedTargets, PoseTargets};
pub use gaussian::{gaussian_radius, render_gaussian, MIN_OVERLAP};

use crate::model::HeadOutputs;
use crate::tensor::{Real, Tensor};

impl EncodedTargets {
    /// The targets laid out as if a network had predicted them perfectly.
    /// Segmentation becomes a one-hot distribution.
    pub fn as_outputs<T: Real>(&self) -> HeadOutputs<T> {
        let (h, w) = (self.feat_h, self.feat_w);
        let t = |c: usize, hh: usize, ww: usize, v: &[f64]| {
            Tensor::new(vec![1, c, hh, ww], v.iter().map(|&x| T::lit(x)).collect()).expect("target shape")
        };
        let mut out = HeadOutputs::default();
        if let Some(d) = &self.detection {
            out.center_heatmap = Some(t(self.num_classes, h, w, &d.center));
            out.size_map = Some(t(2, h, w, &d.size));
            out.offset_map = Some(t(2, h, w, &d.offset));
        }
        if let Some(p) = &self.pose {
            out.keypoint_heatmap = Some(t(self.num_keypoints, h, w, &p.heatmap));
            out.keypoint_offset = Some(t(2, h, w, &p.offset));
            out.joint_regression = Some(t(2 * self.num_keypoints, h, w, &p.joints));
        }
        if let Some(seg) = &self.segmentation {
            let s = self.seg_resolution;
            let c = self.num_classes + 1;
            let mut onehot = vec![0.0; c * s * s];
            for (i, &id) in seg.iter().enumerate() {
                onehot[id as usize * s * s + i] = 1.0;
            }
            out.seg_softmax = Some(t(c, s, s, &onehot));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadConfig, Task};

    fn cfg() -> HeadConfig {
        HeadConfig {
            num_keypoints: 2,
            seg_resolution: 8,
            ..HeadConfig::default()
        }
    }

    #[test]
    fn empty_annotation_encodes_to_zeros() {
        let t = encode_targets(&SceneAnnotation::empty(32, 32), &cfg()).unwrap();
        let d = t.detection.unwrap();
        assert!(d.center.iter().all(|&v| v == 0.0));
        assert!(d.mask.iter().all(|&m| !m));
        let p = t.pose.unwrap();
        assert!(p.heatmap.iter().all(|&v| v == 0.0));
        assert!(!p.offset_mask.iter().any(|&m| m) && !p.joint_mask.iter().any(|&m| m));
        assert_eq!(t.collisions, 0);
    }

    #[test]
    fn hand_worked_encode() {
        let mut ann = SceneAnnotation::empty(16, 16);
        ann.boxes.push(BoxAnnotation { class: 1, cx: 10.0, cy: 6.0, w: 8.0, h: 4.0 });
        let t = encode_targets(&ann, &cfg()).unwrap();
        let d = t.detection.unwrap();
        let (w, plane) = (4, 16);
        let cell = w + 2;
        assert_eq!(d.center[plane + cell], 1.0);
        assert_eq!((d.offset[cell], d.offset[plane + cell]), (0.5, 0.5));
        assert_eq!((d.size[cell], d.size[plane + cell]), (2.0, 1.0));
        assert_eq!(d.mask.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn same_class_same_cell_counts_a_collision() {
        let mut ann = SceneAnnotation::empty(16, 16);
        ann.boxes.push(BoxAnnotation { class: 2, cx: 9.0, cy: 9.0, w: 4.0, h: 4.0 });
        ann.boxes.push(BoxAnnotation { class: 2, cx: 10.0, cy: 10.0, w: 8.0, h: 6.0 });
        let t = encode_targets(&ann, &cfg()).unwrap();
        assert_eq!(t.collisions, 1);
        let d = t.detection.unwrap();
        let cell = 2 * 4 + 2;
        assert_eq!(d.size[cell], 2.0);
        assert_eq!(d.offset[cell], 0.5);
    }

    #[test]
    fn hand_worked_decode() {
        let (h, w) = (8, 8);
        let plane = h * w;
        let mut heat = vec![0.0f64; plane];
        let mut size = vec![0.0; 2 * plane];
        let mut off = vec![0.0; 2 * plane];
        let cell = 4 * w + 3;
        heat[cell] = 0.9;
        off[cell] = 0.2;
        off[plane + cell] = 0.3;
        size[cell] = 2.5;
        size[plane + cell] = 5.0;
        let out = HeadOutputs {
            center_heatmap: Some(Tensor::new(vec![1, 1, h, w], heat).unwrap()),
            size_map: Some(Tensor::new(vec![1, 2, h, w], size).unwrap()),
            offset_map: Some(Tensor::new(vec![1, 2, h, w], off).unwrap()),
            ..HeadOutputs::default()
        };
        let dets = decode_detections(&out, 0, &DecodeParams::default(), 4).unwrap();
        assert_eq!(dets.len(), 1);
        let d = dets[0];
        assert!((d.cx - 12.8).abs() < 1e-12 && (d.cy - 17.2).abs() < 1e-12);
        assert_eq!((d.w, d.h), (10.0, 20.0));
        assert_eq!(d.score, 0.9);
    }

    #[test]
    fn below_threshold_decodes_nothing() {
        let out = HeadOutputs {
            center_heatmap: Some(Tensor::full(vec![1, 3, 4, 4], 0.29f64)),
            size_map: Some(Tensor::zeros(vec![1, 2, 4, 4])),
            offset_map: Some(Tensor::zeros(vec![1, 2, 4, 4])),
            ..HeadOutputs::default()
        };
        assert!(decode_detections(&out, 0, &DecodeParams::default(), 4).unwrap().is_empty());
    }

    #[test]
    fn segmentation_ties_go_to_background() {
        assert_eq!(argmax_classes(&[0.25; 8], 4, 2), vec![0, 0]);
        assert_eq!(argmax_classes(&[0.1, 0.4, 0.45, 0.3, 0.45, 0.3], 3, 2), vec![1, 0]);
    }

    #[test]
    fn pose_falls_back_to_regression_without_peaks() {
        let mut ann = SceneAnnotation::empty(32, 32);
        ann.boxes.push(BoxAnnotation { class: 0, cx: 14.0, cy: 14.0, w: 12.0, h: 16.0 });
        ann.persons.push(PersonKeypoints {
            box_index: 0,
            keypoints: vec![
                Keypoint { x: 13.0, y: 9.0, visible: true },
                Keypoint { x: 17.0, y: 19.0, visible: true },
            ],
        });
        let heads = HeadConfig {
            tasks: [Task::Detection, Task::Pose].into_iter().collect(),
            ..cfg()
        };
        let t = encode_targets(&ann, &heads).unwrap();
        let mut out = t.as_outputs::<f64>();
        out.keypoint_heatmap = Some(Tensor::zeros(vec![1, 2, 8, 8]));
        let dets = decode_detections(&out, 0, &DecodeParams::default(), 4).unwrap();
        let poses = decode_poses(&out, 0, &dets, &DecodeParams::default(), 4).unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0].confidence, vec![FALLBACK_CONFIDENCE; 2]);
        assert!((poses[0].joints[0].0 - 13.0).abs() < 1e-12 && (poses[0].joints[0].1 - 9.0).abs() < 1e-12);
        assert!((poses[0].joints[1].0 - 17.0).abs() < 1e-12 && (poses[0].joints[1].1 - 19.0).abs() < 1e-12);
    }
}
