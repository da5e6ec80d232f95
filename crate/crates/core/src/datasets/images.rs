use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::{load_dataset, DomainDataset, Split};
use crate::model::Shape3;
use crate::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads a domain from `path`.
///
/// A directory holding `manifest.json` is read as a saved dataset (and must
/// already have the requested shape). Otherwise every subdirectory is one
/// class, named after the directory, and every file inside must decode as
/// an image. Classes and files are taken in lexicographic order. Images are
/// resized bilinearly; grayscale sources are replicated to three channels
/// and color sources reduced to luma when `resize.c == 1`.
pub fn load_image_domain(path: &Path, resize: Shape3) -> Result<DomainDataset> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    if !(resize.c == 1 || resize.c == 3) || resize.is_empty() {
        return Err(Error::invalid(format!("unsupported target shape {resize}")));
    }
    if path.join("manifest.json").exists() {
        let ds = load_dataset(path)?;
        if ds.shape() != resize {
            return Err(Error::shape(resize, ds.shape()));
        }
        return Ok(ds);
    }
    let classes: Vec<PathBuf> = sorted_entries(path)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::Empty(format!("no class directories in {}", path.display())));
    }
    let (w, h) = (resize.w as u32, resize.h as u32);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut label_set = Vec::new();
    for (y, dir) in classes.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
        if files.is_empty() {
            return Err(Error::Empty(format!("class directory {} has no images", dir.display())));
        }
        for file in files {
            let img = image::ImageReader::open(&file)?
                .with_guessed_format()?
                .decode()
                .map_err(|source| Error::Image { path: file.clone(), source })?;
            let img = img.resize_exact(w, h, FilterType::Triangle);
            if resize.c == 3 {
                images.extend(img.to_rgb8().as_raw().iter().map(|v| f32::from(*v) / 255.0));
            } else {
                images.extend(img.to_luma8().as_raw().iter().map(|v| f32::from(*v) / 255.0));
            }
            labels.push(y as u16);
        }
        label_set.push(dir.file_name().unwrap().to_string_lossy().into_owned());
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "domain".into());
    DomainDataset::new(name, resize, images, labels, label_set, Split::Train)
}
