//! Annotation JSON, run-length class maps and binary PPM images.
//!
//! Coordinates are written as decimal strings with six fractional digits;
//! values produced by the generator are already rounded to that grid, so a
//! save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{BoxAnnotation, Keypoint, PersonKeypoints, SceneAnnotation};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ANNOTATION_VERSION: &str = "1";

/// One annotated image of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub id: u64,
    /// Image file name relative to the annotation file.
    pub file: Option<String>,
    pub annotation: SceneAnnotation,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<AnnotatedImage>,
}

mod coord {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:.6}"))
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Number(f64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(t) => t.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    version: String,
    images: Vec<RawImage>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: u64,
    width: usize,
    height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default)]
    boxes: Vec<RawBox>,
    #[serde(default)]
    persons: Vec<RawPerson>,
    seg_rle: Vec<(u16, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    class: usize,
    #[serde(with = "coord")]
    cx: f64,
    #[serde(with = "coord")]
    cy: f64,
    #[serde(with = "coord")]
    w: f64,
    #[serde(with = "coord")]
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPerson {
    box_index: usize,
    keypoints: Vec<RawKeypoint>,
}

#[derive(Serialize, Deserialize)]
struct RawKeypoint {
    #[serde(with = "coord")]
    x: f64,
    #[serde(with = "coord")]
    y: f64,
    visible: bool,
}

/// Row-major `(id, run length)` pairs.
pub fn rle_encode(map: &[u16]) -> Vec<(u16, usize)> {
    let mut out: Vec<(u16, usize)> = Vec::new();
    for &id in map {
        match out.last_mut() {
            Some((last, n)) if *last == id => *n += 1,
            _ => out.push((id, 1)),
        }
    }
    out
}

pub fn rle_decode(runs: &[(u16, usize)], len: usize) -> Result<Vec<u16>> {
    let total: usize = runs.iter().map(|r| r.1).sum();
    if total != len {
        return Err(Error::Malformed(format!("run lengths cover {total} pixels, expected {len}")));
    }
    let mut out = Vec::with_capacity(len);
    for &(id, n) in runs {
        out.extend(std::iter::repeat_n(id, n));
    }
    Ok(out)
}

pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    let raw = RawFile {
        version: ANNOTATION_VERSION.into(),
        images: ds
            .images
            .iter()
            .map(|img| {
                let a = &img.annotation;
                RawImage {
                    id: img.id,
                    width: a.width,
                    height: a.height,
                    file: img.file.clone(),
                    boxes: a
                        .boxes
                        .iter()
                        .map(|b| RawBox { class: b.class, cx: b.cx, cy: b.cy, w: b.w, h: b.h })
                        .collect(),
                    persons: a
                        .persons
                        .iter()
                        .map(|p| RawPerson {
                            box_index: p.box_index,
                            keypoints: p
                                .keypoints
                                .iter()
                                .map(|k| RawKeypoint { x: k.x, y: k.y, visible: k.visible })
                                .collect(),
                        })
                        .collect(),
                    seg_rle: rle_encode(&a.seg_map),
                }
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&raw)?)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("annotation file is not JSON: {e}")))?;
    match value.get("version") {
        Some(serde_json::Value::String(v)) if v == ANNOTATION_VERSION => {}
        Some(v) => {
            return Err(Error::UnsupportedVersion {
                found: v.as_str().map_or_else(|| v.to_string(), str::to_string),
                supported: ANNOTATION_VERSION.into(),
            })
        }
        None => return Err(Error::Malformed("annotation file has no version field".into())),
    }
    let raw: RawFile =
        serde_json::from_value(value).map_err(|e| Error::Malformed(format!("annotation schema: {e}")))?;
    let mut images = Vec::with_capacity(raw.images.len());
    for img in raw.images {
        let seg_map = rle_decode(&img.seg_rle, img.width * img.height)
            .map_err(|e| Error::Malformed(format!("image {}: {e}", img.id)))?;
        let annotation = SceneAnnotation {
            height: img.height,
            width: img.width,
            boxes: img
                .boxes
                .iter()
                .map(|b| BoxAnnotation { class: b.class, cx: b.cx, cy: b.cy, w: b.w, h: b.h })
                .collect(),
            persons: img
                .persons
                .iter()
                .map(|p| PersonKeypoints {
                    box_index: p.box_index,
                    keypoints: p.keypoints.iter().map(|k| Keypoint { x: k.x, y: k.y, visible: k.visible }).collect(),
                })
                .collect(),
            seg_map,
        };
        annotation.validate(u16::MAX as usize).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("image {}: {m}", img.id)),
            other => other,
        })?;
        images.push(AnnotatedImage { id: img.id, file: img.file, annotation });
    }
    Ok(Dataset { images })
}

pub fn save_annotations(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_json(ds)?)?;
    Ok(())
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_json(&fs::read_to_string(path)?)
}

/// Binary PPM of interleaved 8-bit RGB.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// `(width, height, interleaved RGB)` of a binary PPM.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Malformed("PPM header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::Malformed("not a binary PPM (P6)".into()));
    }
    let num = |t: String| t.parse::<usize>().map_err(|_| Error::Malformed(format!("bad PPM header field `{t}`")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let max = num(token()?)?;
    if max == 0 || max > 255 {
        return Err(Error::Malformed(format!("unsupported PPM maxval {max}")));
    }
    pos += 1;
    let need = w * h * 3;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Truncated(format!("PPM needs {need} pixel bytes")))?;
    let rgb = if max == 255 {
        data.to_vec()
    } else {
        data.iter().map(|&v| ((v as usize * 255 + max / 2) / max) as u8).collect()
    };
    Ok((w, h, rgb))
}

/// `[3, H, W]` in `[0, 1]` → PPM file.
pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = match image.shape() {
        &[3, h, w] => (h, w),
        s => return Err(Error::invalid(format!("expected a [3, H, W] image, got {s:?}"))),
    };
    let plane = h * w;
    let d = image.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            rgb.push((d[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, encode_ppm(w, h, &rgb))?;
    Ok(())
}

/// PPM file → `[3, H, W]` in `[0, 1]`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let (w, h, rgb) = decode_ppm(&fs::read(path)?)?;
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = rgb[3 * p + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub const ANNOTATION_FILE: &str = "annotations.json";

/// Writes `annotations.json` and `images/NNNNNN.ppm` under `dir`.
pub fn write_scenes(dir: impl AsRef<Path>, scenes: &[super::Scene]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut ds = Dataset::default();
    for (i, s) in scenes.iter().enumerate() {
        let file = format!("images/{i:06}.ppm");
        write_ppm(dir.join(&file), &s.image)?;
        ds.images.push(AnnotatedImage {
            id: i as u64,
            file: Some(file),
            annotation: s.annotation.clone(),
        });
    }
    save_annotations(&ds, dir.join(ANNOTATION_FILE))
}

/// Loads a directory written by [`write_scenes`].
pub fn read_scenes(dir: impl AsRef<Path>) -> Result<Vec<super::Scene>> {
    let dir = dir.as_ref();
    let ds = load_annotations(dir.join(ANNOTATION_FILE))?;
    ds.images
        .into_iter()
        .map(|img| {
            let file = img
                .file
                .ok_or_else(|| Error::Validation(format!("image {}: no image file", img.id)))?;
            let image = read_ppm(dir.join(&file))?;
            let a = &img.annotation;
            if image.shape() != [3, a.height, a.width] {
                return Err(Error::Validation(format!(
                    "image {}: {file} is {:?}, annotation says {}x{}",
                    img.id,
                    image.shape(),
                    a.width,
                    a.height
                )));
            }
            Ok(super::Scene { image, annotation: img.annotation })
        })
        .collect()
}
