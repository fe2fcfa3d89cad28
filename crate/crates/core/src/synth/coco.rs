//! Import of COCO-format instance and keypoint annotations.
//!
//! The person category becomes class 0 and the remaining categories follow
//! densely in id order. Instance masks of the same class are merged into one
//! class map; later annotations win where classes overlap. Problems with
//! single annotations are reported as warnings and never abort the import.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use super::io::{AnnotatedImage, Dataset};
use crate::codec::{BoxAnnotation, Keypoint, PersonKeypoints, SceneAnnotation};
use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportReport {
    pub dataset: Dataset,
    /// Category name of each dense class id.
    pub class_names: Vec<String>,
    pub num_keypoints: usize,
    pub warnings: Vec<String>,
}

/// Even-odd fill of a closed polygon `[x0, y0, x1, y1, …]` at pixel centers.
fn fill_polygon(poly: &[f64], h: usize, w: usize, out: &mut [bool]) -> bool {
    if poly.len() < 6 || poly.len() % 2 != 0 || poly.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let mut xs = Vec::new();
    for y in 0..h {
        let py = y as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            if (a.1 <= py) != (b.1 <= py) {
                xs.push(a.0 + (py - a.1) / (b.1 - a.1) * (b.0 - a.0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            for x in 0..w {
                let px = x as f64 + 0.5;
                if px >= pair[0] && px < pair[1] {
                    out[y * w + x] ^= true;
                }
            }
        }
    }
    true
}

/// Mask of one annotation's `segmentation` field, or a reason it has none.
fn rasterize(seg: &Value, h: usize, w: usize) -> std::result::Result<Vec<bool>, String> {
    match seg {
        Value::Array(polys) => {
            let mut mask = vec![false; h * w];
            for p in polys {
                let coords: Option<Vec<f64>> = p.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect());
                let mut part = vec![false; h * w];
                match coords {
                    Some(c) if fill_polygon(&c, h, w, &mut part) => {
                        mask.iter_mut().zip(part).for_each(|(m, p)| *m |= p);
                    }
                    _ => return Err("unrasterizable polygon".into()),
                }
            }
            Ok(mask)
        }
        Value::Object(rle) => {
            let size: Vec<usize> = rle
                .get("size")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|v| v.as_u64().map(|v| v as usize)).collect())
                .unwrap_or_default();
            if size != [h, w] {
                return Err(format!("RLE size {size:?} does not match image {h}x{w}"));
            }
            let counts = match rle.get("counts") {
                Some(Value::Array(c)) => c.iter().filter_map(Value::as_u64).collect::<Vec<_>>(),
                Some(Value::String(_)) => return Err("compressed RLE is not supported".into()),
                _ => return Err("RLE without counts".into()),
            };
            // Column-major runs, alternating background and foreground.
            let mut mask = vec![false; h * w];
            let mut idx = 0usize;
            for (i, &n) in counts.iter().enumerate() {
                for _ in 0..n {
                    if idx >= h * w {
                        return Err("RLE runs exceed the image".into());
                    }
                    if i % 2 == 1 {
                        let (x, y) = (idx / h, idx % h);
                        mask[y * w + x] = true;
                    }
                    idx += 1;
                }
            }
            Ok(mask)
        }
        Value::Null => Err("no segmentation".into()),
        _ => Err("unrecognised segmentation".into()),
    }
}

fn u64_of(v: &Value, key: &str) -> Option<u64> {
    v.get(key).and_then(Value::as_u64)
}

/// Reads every `*.json` in `dir` and merges them by image and annotation id.
pub fn import_coco(dir: impl AsRef<Path>) -> Result<ImportReport> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut report = ImportReport::default();
    if files.is_empty() {
        report.warnings.push(format!("no annotation JSON in {}", dir.display()));
        return Ok(report);
    }

    let mut images: BTreeMap<u64, Value> = BTreeMap::new();
    let mut cats: BTreeMap<u64, Value> = BTreeMap::new();
    let mut anns: BTreeMap<u64, Value> = BTreeMap::new();
    for f in &files {
        let parsed: Value = match fs::read_to_string(f).map_err(|e| e.to_string()).and_then(|t| {
            serde_json::from_str(&t).map_err(|e| e.to_string())
        }) {
            Ok(v) => v,
            Err(e) => {
                report.warnings.push(format!("{}: skipped ({e})", f.display()));
                continue;
            }
        };
        let list = |k: &str| parsed.get(k).and_then(Value::as_array).cloned().unwrap_or_default();
        for v in list("images") {
            if let Some(id) = u64_of(&v, "id") {
                images.entry(id).or_insert(v);
            }
        }
        for v in list("categories") {
            if let Some(id) = u64_of(&v, "id") {
                cats.entry(id).or_insert(v);
            }
        }
        for v in list("annotations") {
            let Some(id) = u64_of(&v, "id") else {
                report.warnings.push("annotation without id skipped".into());
                continue;
            };
            match anns.get_mut(&id) {
                // The same instance listed in both files: keep the richer one.
                Some(prev) if prev.get("keypoints").is_none() && v.get("keypoints").is_some() => {
                    prev["keypoints"] = v["keypoints"].clone();
                }
                Some(_) => {}
                None => {
                    anns.insert(id, v);
                }
            }
        }
    }

    let person_cat = cats
        .iter()
        .find(|(_, c)| c.get("name").and_then(Value::as_str) == Some("person"))
        .map(|(&id, _)| id);
    let mut dense: BTreeMap<u64, usize> = BTreeMap::new();
    for &id in person_cat.iter().chain(cats.keys().filter(|&&id| Some(id) != person_cat)) {
        dense.insert(id, report.class_names.len());
        let name = cats[&id].get("name").and_then(Value::as_str).unwrap_or("unnamed");
        report.class_names.push(name.to_string());
    }
    report.num_keypoints = person_cat
        .and_then(|id| cats[&id].get("keypoints").and_then(Value::as_array).map(Vec::len))
        .unwrap_or(0);

    let mut per_image: BTreeMap<u64, Vec<&Value>> = BTreeMap::new();
    for a in anns.values() {
        match u64_of(a, "image_id") {
            Some(img) if images.contains_key(&img) => per_image.entry(img).or_default().push(a),
            _ => report.warnings.push(format!(
                "annotation {}: unknown image, skipped",
                u64_of(a, "id").unwrap_or_default()
            )),
        }
    }

    for (&id, img) in &images {
        let (Some(w), Some(h)) = (u64_of(img, "width"), u64_of(img, "height")) else {
            report.warnings.push(format!("image {id}: missing size, skipped"));
            continue;
        };
        let (w, h) = (w as usize, h as usize);
        let file = img.get("file_name").and_then(Value::as_str).map(str::to_string);
        if let Some(f) = &file {
            if !dir.join(f).exists() {
                report.warnings.push(format!("image {id}: file {f} not found"));
            }
        }
        let mut ann = SceneAnnotation::empty(h, w);
        for a in per_image.get(&id).map(Vec::as_slice).unwrap_or_default() {
            let aid = u64_of(a, "id").unwrap_or_default();
            let Some(&class) = u64_of(a, "category_id").and_then(|c| dense.get(&c)) else {
                report.warnings.push(format!("annotation {aid}: unknown category, skipped"));
                continue;
            };
            if u64_of(a, "iscrowd") == Some(1) {
                report.warnings.push(format!("annotation {aid}: crowd region skipped"));
                continue;
            }
            let bbox: Vec<f64> = a
                .get("bbox")
                .and_then(Value::as_array)
                .map(|b| b.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default();
            if bbox.len() != 4 {
                report.warnings.push(format!("annotation {aid}: missing bbox, skipped"));
                continue;
            }
            let x0 = bbox[0].clamp(0.0, w as f64);
            let y0 = bbox[1].clamp(0.0, h as f64);
            let x1 = (bbox[0] + bbox[2]).clamp(0.0, w as f64);
            let y1 = (bbox[1] + bbox[3]).clamp(0.0, h as f64);
            if !(x1 > x0 && y1 > y0) {
                report.warnings.push(format!("annotation {aid}: empty bbox, skipped"));
                continue;
            }
            match rasterize(a.get("segmentation").unwrap_or(&Value::Null), h, w) {
                Ok(mask) => {
                    for (p, m) in mask.into_iter().enumerate() {
                        if m {
                            ann.seg_map[p] = class as u16 + 1;
                        }
                    }
                }
                Err(reason) => report.warnings.push(format!("annotation {aid}: mask skipped ({reason})")),
            }
            let kps: Vec<f64> = a
                .get("keypoints")
                .and_then(Value::as_array)
                .map(|k| k.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default();
            let labelled = kps.chunks_exact(3).any(|k| k[2] > 0.0);
            if labelled && Some(class) != dense.get(&person_cat.unwrap_or(u64::MAX)).copied() {
                report.warnings.push(format!("annotation {aid}: keypoints on a non-person class ignored"));
            } else if labelled {
                ann.persons.push(PersonKeypoints {
                    box_index: ann.boxes.len(),
                    keypoints: kps
                        .chunks_exact(3)
                        .map(|k| Keypoint {
                            x: k[0].clamp(0.0, w as f64),
                            y: k[1].clamp(0.0, h as f64),
                            visible: k[2] > 0.0,
                        })
                        .collect(),
                });
            }
            ann.boxes.push(BoxAnnotation {
                class,
                cx: (x0 + x1) / 2.0,
                cy: (y0 + y1) / 2.0,
                w: x1 - x0,
                h: y1 - y0,
            });
        }
        report.dataset.images.push(AnnotatedImage { id, file, annotation: ann });
    }
    Ok(report)
}
