//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MCNW" | version u32 | count u32 |
//!   count × ( name_len u16 | name utf-8 | rank u8 | dims u32 × rank | values f32 × Π dims )
//! ```
//!
//! Entries are trainable parameters followed by normalization running
//! statistics, each group in name order.

use std::fs;
use std::path::Path;

use super::{McnModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MCNW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_weights<T: Real>(model: &McnModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub(crate) fn encode<T: Real>(model: &McnModel<T>) -> Result<Vec<u8>> {
    let entries: Vec<(&String, &Tensor<T>)> = model.params.iter().chain(model.buffers.iter()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, only {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Loads weights into `model`. The file is parsed and checked in full
/// before anything is written, so a failed load leaves the model untouched.
pub fn load_weights<T: Real>(path: impl AsRef<Path>, model: &mut McnModel<T>) -> Result<()> {
    let bytes = fs::read(path)?;
    decode_into(&bytes, model)
}

pub(crate) fn decode_into<T: Real>(bytes: &[u8], model: &mut McnModel<T>) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            supported: WEIGHTS_VERSION.to_string(),
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Malformed(format!("entry {i}: name is not valid UTF-8")))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("values of `{name}`"))?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes after last entry", bytes.len() - r.pos)));
    }

    let expected = model.params.len() + model.buffers.len();
    if entries.len() != expected {
        return Err(Error::ParamMismatch(format!(
            "file has {} entries, model expects {expected}",
            entries.len()
        )));
    }
    for (name, t) in &entries {
        let target = model
            .params
            .get(name)
            .or_else(|| model.buffers.get(name))
            .ok_or_else(|| Error::ParamMismatch(format!("model has no parameter `{name}`")))?;
        if target.shape() != t.shape() {
            return Err(Error::ParamMismatch(format!(
                "`{name}`: file shape {:?}, model shape {:?}",
                t.shape(),
                target.shape()
            )));
        }
    }
    for (name, t) in entries {
        if let Some(p) = model.params.get_mut(&name) {
            p.data_mut().copy_from_slice(t.data());
            p.clear_grad();
        } else if let Some(b) = model.buffers.get_mut(&name) {
            b.data_mut().copy_from_slice(t.data());
        }
    }
    Ok(())
}

pub fn save_config(config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(config)?)?;
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BackboneConfig, HeadConfig, NormKind, Task};

    fn model(tasks: &[Task], seed: u64) -> McnModel<f32> {
        let b = BackboneConfig {
            stage_widths: vec![4, 8],
            stage_strides: vec![2, 2],
            block_depth: 1,
            norm: NormKind::Batch,
        };
        let h = HeadConfig {
            tasks: tasks.iter().copied().collect(),
            seg_resolution: 16,
            ..HeadConfig::default()
        };
        build_model(&b, &h, seed).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let src = model(&Task::ALL, 3);
        let bytes = encode(&src).unwrap();
        let mut dst = model(&Task::ALL, 99);
        decode_into(&bytes, &mut dst).unwrap();
        for (name, t) in src.params() {
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = dst.param(name).unwrap().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(encode(&dst).unwrap(), bytes);
    }

    #[test]
    fn different_heads_is_a_mismatch() {
        let bytes = encode(&model(&Task::ALL, 3)).unwrap();
        let mut other = model(&[Task::Detection], 3);
        assert!(matches!(decode_into(&bytes, &mut other), Err(Error::ParamMismatch(_))));
    }

    #[test]
    fn bad_magic_leaves_model_untouched() {
        let mut bytes = encode(&model(&Task::ALL, 3)).unwrap();
        bytes[0] = b'X';
        let mut dst = model(&Task::ALL, 5);
        let before = encode(&dst).unwrap();
        assert!(matches!(decode_into(&bytes, &mut dst), Err(Error::BadMagic(_))));
        assert_eq!(encode(&dst).unwrap(), before);
    }

    #[test]
    fn truncation_and_version_are_distinct_errors() {
        let bytes = encode(&model(&Task::ALL, 3)).unwrap();
        let mut dst = model(&Task::ALL, 5);
        let before = encode(&dst).unwrap();
        assert!(matches!(decode_into(&bytes[..bytes.len() - 3], &mut dst), Err(Error::Truncated(_))));
        assert_eq!(encode(&dst).unwrap(), before);
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_into(&v2, &mut dst), Err(Error::UnsupportedVersion { .. })));
    }
}
