//! On-disk layout of a domain directory:
//!
//! - `manifest.json`: name, label set, split, seed, shift and shape.
//! - `data.bin`, little-endian: magic `NTDS`, `u32` version, `u32` N, H, W,
//!   C, then `N·H·W·C` `f32` pixels in sample-major HWC order, then `N`
//!   `u16` labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainDataset, Shift, Split};
use crate::model::Shape3;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"NTDS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub label_set: Vec<String>,
    pub split: Split,
    pub seed: Option<u64>,
    pub shift: Option<Shift>,
    pub shape: [usize; 3],
    pub count: usize,
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let shape = ds.shape();
    let manifest = DatasetManifest {
        format_version: VERSION,
        name: ds.name.clone(),
        label_set: ds.label_set.clone(),
        split: ds.split,
        seed: ds.seed_provenance,
        shift: ds.shift,
        shape: [shape.h, shape.w, shape.c],
        count: ds.len(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    let mut buf = Vec::with_capacity(24 + ds.images().len() * 4 + ds.len() * 2);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, ds.len() as u32, shape.h as u32, shape.w as u32, shape.c as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.images() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for y in ds.labels() {
        buf.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(dir.join("data.bin"), buf)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(Error::MissingPath(mpath));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&mpath)?)
        .map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format_version != VERSION {
        return Err(Error::format(&mpath, format!("unsupported version {}", manifest.format_version)));
    }
    let bpath = dir.join("data.bin");
    let bytes = fs::read(&bpath)?;
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(Error::format(&bpath, "bad header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != VERSION as usize {
        return Err(Error::format(&bpath, "unsupported version"));
    }
    let (n, shape) = (word(1), Shape3::new(word(2), word(3), word(4)));
    if n != manifest.count || [shape.h, shape.w, shape.c] != manifest.shape {
        return Err(Error::format(&bpath, "header disagrees with manifest"));
    }
    let pixels = n * shape.len();
    if bytes.len() != 24 + pixels * 4 + n * 2 {
        return Err(Error::format(&bpath, "truncated or oversized blob"));
    }
    let body = &bytes[24..];
    let images = body[..pixels * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = body[pixels * 4..]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut ds = DomainDataset::new(manifest.name, shape, images, labels, manifest.label_set, manifest.split)
        .map_err(|e| Error::format(&bpath, e.to_string()))?
        .with_seed(manifest.seed);
    ds.shift = manifest.shift;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_domain_pair, SyntheticPairConfig};

    #[test]
    fn round_trip_and_corruption() {
        let cfg = SyntheticPairConfig {
            num_classes: 3,
            per_class: 5,
            image: Shape3::new(8, 8, 3),
            ..Default::default()
        };
        let ds = generate_synthetic_domain_pair(&cfg).unwrap().target.train;
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);

        let blob = dir.path().join("data.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes.pop();
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
