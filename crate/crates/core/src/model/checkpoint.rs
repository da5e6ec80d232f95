//! On-disk checkpoints.
//!
//! A checkpoint directory holds:
//!
//! - `manifest.json`: architecture id, input shape, class count, feature
//!   dimension, mask sparsity, seed and training provenance.
//! - `params.bin`: magic `NTPW`, `u32` version (1), `u32` record count, then
//!   per tensor: `u32` name length, UTF-8 name, `u32` rank, `u64` dims,
//!   row-major `f32` values. All integers and floats little-endian.
//! - `mask.bin` (optional): magic `NTPM`, `u64` bit count, then the keep
//!   bits packed LSB-first, one bit per feature-extractor weight.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, Scope, Shape3, SparsityMask, SplitClassifier};
use crate::{Error, Result};

const PARAMS_MAGIC: &[u8; 4] = b"NTPW";
const MASK_MAGIC: &[u8; 4] = b"NTPM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub feature_dim: usize,
    pub mask_sparsity: Option<f64>,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Where a checkpoint came from (`stage` is e.g. `pretrain`, `ntp`,
/// `magnitude`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub stage: String,
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SplitClassifier<f32>,
    pub mask: Option<SparsityMask>,
    pub manifest: Manifest,
}

pub fn encode_params(model: &SplitClassifier<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.num_params() * 4);
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (info, tensor) in model.param_info().iter().zip(&model.params) {
        out.extend_from_slice(&(info.name.len() as u32).to_le_bytes());
        out.extend_from_slice(info.name.as_bytes());
        out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for d in &tensor.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes `params.bin` into `model`, checking names and shapes.
pub fn decode_params_into(bytes: &[u8], model: &mut SplitClassifier<f32>, path: &Path) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4)? != PARAMS_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(Error::format(path, "unsupported version"));
    }
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::format(
            path,
            format!("{count} tensors, architecture has {}", model.params.len()),
        ));
    }
    for i in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let info = &model.param_info()[i];
        if name != info.name {
            return Err(Error::format(path, format!("expected tensor {}, found {name}", info.name)));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != info.shape {
            return Err(Error::format(path, format!("tensor {name} has shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = &mut model.params[i].data;
        for (v, chunk) in data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(())
}

pub fn encode_mask(mask: &SparsityMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mask.len().div_ceil(8));
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&(mask.len() as u64).to_le_bytes());
    for chunk in mask.keep().chunks(8) {
        let mut byte = 0u8;
        for (bit, keep) in chunk.iter().enumerate() {
            if *keep {
                byte |= 1 << bit;
            }
        }
        out.push(byte);
    }
    out
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<SparsityMask> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4)? != MASK_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let len = r.u64()? as usize;
    let packed = r.take(len.div_ceil(8))?;
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    let keep = (0..len).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(SparsityMask::from_keep(keep))
}

pub fn save(
    dir: &Path,
    model: &SplitClassifier<f32>,
    mask: Option<&SparsityMask>,
    seed: u64,
    provenance: Provenance,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let input = model.input_shape();
    let manifest = Manifest {
        format_version: VERSION,
        architecture: model.arch().id.clone(),
        input_shape: [input.h, input.w, input.c],
        num_classes: model.num_classes(),
        feature_dim: model.feature_dim(),
        mask_sparsity: mask.map(SparsityMask::sparsity),
        seed,
        provenance,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join("params.bin"), encode_params(model))?;
    let mask_path = dir.join("mask.bin");
    match mask {
        Some(mask) => {
            if mask.len() != model.scope_len(Scope::Prunable) {
                return Err(Error::shape(model.scope_len(Scope::Prunable), mask.len()));
            }
            fs::write(mask_path, encode_mask(mask))?
        }
        None if mask_path.exists() => fs::remove_file(mask_path)?,
        None => {}
    }
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingPath(manifest_path));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.format_version != VERSION {
        return Err(Error::format(&manifest_path, "unsupported version"));
    }
    let [h, w, c] = manifest.input_shape;
    let arch = ArchSpec::registry(&manifest.architecture, Shape3::new(h, w, c), manifest.num_classes)?;
    let mut model = SplitClassifier::<f32>::zeros(arch)?;
    let params_path = dir.join("params.bin");
    decode_params_into(&fs::read(&params_path)?, &mut model, &params_path)?;
    let mask_path = dir.join("mask.bin");
    let mask = if mask_path.exists() {
        let mask = decode_mask(&fs::read(&mask_path)?, &mask_path)?;
        if mask.len() != model.scope_len(Scope::Prunable) {
            return Err(Error::format(&mask_path, "mask length does not match architecture"));
        }
        Some(mask)
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        mask,
        manifest,
    })
}
