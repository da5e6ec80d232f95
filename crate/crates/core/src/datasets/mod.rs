//! Source/target domain datasets: one in-memory representation, synthetic
//! generation, image-folder ingestion, subsetting and persistence.

mod images;
mod store;
mod subset;
mod synthetic;

pub use images::load_image_domain;
pub use store::{load_dataset, save_dataset, DatasetManifest};
pub use subset::{log_spaced_sizes, nested_order, stratified_subset, train_test_split, SubsetSize, SubsetSpec};
pub use synthetic::{generate_synthetic_domain_pair, Shift, SyntheticPair, SyntheticPairConfig};

use serde::{Deserialize, Serialize};

use crate::model::{Batch, Real, Shape3};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A borrowed view of one image and its label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSample<'a> {
    /// `H×W×C` values in `[0, 1]`.
    pub x: &'a [f32],
    pub y: u16,
}

/// Labeled images of one domain, stored contiguously in HWC order.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub label_set: Vec<String>,
    pub split: Split,
    pub seed_provenance: Option<u64>,
    pub shift: Option<Shift>,
    shape: Shape3,
    images: Vec<f32>,
    labels: Vec<u16>,
}

impl DomainDataset {
    /// Validates lengths, the `[0, 1]` range and label bounds.
    pub fn new(
        name: impl Into<String>,
        shape: Shape3,
        images: Vec<f32>,
        labels: Vec<u16>,
        label_set: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid("image shape must be nonempty"));
        }
        if images.len() != labels.len() * shape.len() {
            return Err(Error::shape(format!("{} x {shape}", labels.len()), images.len()));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        if let Some(y) = labels.iter().find(|y| **y as usize >= label_set.len()) {
            return Err(Error::invalid(format!(
                "label {y} outside label set of size {}",
                label_set.len()
            )));
        }
        Ok(DomainDataset {
            name: name.into(),
            label_set,
            split,
            seed_provenance: None,
            shift: None,
            shape,
            images,
            labels,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed_provenance = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn sample(&self, i: usize) -> LabeledSample<'_> {
        LabeledSample {
            x: self.image(i),
            y: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledSample<'_>> {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for y in &self.labels {
            counts[*y as usize] += 1;
        }
        counts
    }

    /// Errors if any class of the label set has no sample.
    pub fn check_class_coverage(&self) -> Result<()> {
        match self.class_counts().iter().position(|c| *c == 0) {
            Some(c) => Err(Error::invalid(format!(
                "dataset {}: class '{}' has no samples",
                self.name, self.label_set[c]
            ))),
            None => Ok(()),
        }
    }

    pub fn mean_pixel(&self) -> f64 {
        if self.images.is_empty() {
            return 0.0;
        }
        self.images.iter().map(|v| f64::from(*v)).sum::<f64>() / self.images.len() as f64
    }

    /// The samples at `indices`, in that order, with the same metadata.
    pub fn select(&self, indices: &[usize]) -> DomainDataset {
        let n = self.shape.len();
        let mut images = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        DomainDataset {
            name: self.name.clone(),
            label_set: self.label_set.clone(),
            split: self.split,
            seed_provenance: self.seed_provenance,
            shift: self.shift,
            shape: self.shape,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Gathers a minibatch, converting pixels to the model's element type.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        let n = self.shape.len();
        let mut x = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            x.extend(self.image(i).iter().map(|v| T::of(f64::from(*v))));
        }
        Batch {
            x,
            y: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn full_batch<T: Real>(&self) -> Batch<T> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Train and test splits of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSplits {
    pub train: DomainDataset,
    pub test: DomainDataset,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_enforces_invariants() {
        let shape = Shape3::new(1, 1, 2);
        let labels = vec!["a".to_string(), "b".to_string()];
        assert!(DomainDataset::new("d", shape, vec![0.0, 1.0], vec![1], labels.clone(), Split::Train).is_ok());
        assert!(DomainDataset::new("d", shape, vec![0.0, 1.5], vec![1], labels.clone(), Split::Train).is_err());
        assert!(DomainDataset::new("d", shape, vec![0.0, f32::NAN], vec![1], labels.clone(), Split::Train).is_err());
        assert!(DomainDataset::new("d", shape, vec![0.0, 1.0], vec![2], labels.clone(), Split::Train).is_err());
        assert!(DomainDataset::new("d", shape, vec![0.0], vec![0], labels, Split::Train).is_err());
    }
}
