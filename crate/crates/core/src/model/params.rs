//! Flat parameter views, sparsity masks and density accounting.

use serde::{Deserialize, Serialize};

use super::network::{ParamRole, Part, SplitClassifier};
use super::real::Real;
use crate::{Error, Result};

/// A subset of a model's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    /// Feature-extractor weights (biases excluded): the pruning domain.
    Prunable,
    FeatureExtractor,
    Classifier,
    All,
}

impl Scope {
    fn admits(self, role: ParamRole, part: Part) -> bool {
        match self {
            Scope::Prunable => part == Part::FeatureExtractor && role == ParamRole::Weight,
            Scope::FeatureExtractor => part == Part::FeatureExtractor,
            Scope::Classifier => part == Part::Classifier,
            Scope::All => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub param: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Concatenation of a scope's tensors plus the map back to them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<T> {
    pub values: Vec<T>,
    pub layout: Vec<Segment>,
    pub scope: Scope,
}

impl<T: Real> ParameterVector<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fraction of exactly-nonzero entries, `card(W) / |W|`.
pub fn density<T: Real>(values: &[T]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("density of an empty vector".into()));
    }
    let nonzero = values.iter().filter(|v| **v != T::zero()).count();
    Ok(nonzero as f64 / values.len() as f64)
}

/// `1 - density`.
pub fn sparsity<T: Real>(values: &[T]) -> Result<f64> {
    Ok(1.0 - density(values)?)
}

/// Binary keep-mask over the prunable (feature-extractor weight) vector.
/// `true` keeps a weight, `false` forces it to zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityMask {
    keep: Vec<bool>,
}

impl SparsityMask {
    pub fn ones(len: usize) -> Self {
        SparsityMask {
            keep: vec![true; len],
        }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        SparsityMask { keep }
    }

    /// Keeps exactly the nonzero entries of `values`.
    pub fn from_support<T: Real>(values: &[T]) -> Self {
        SparsityMask {
            keep: values.iter().map(|v| *v != T::zero()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept(&self, i: usize) -> bool {
        self.keep[i]
    }

    /// Fraction of pruned positions.
    pub fn sparsity(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len() as f64
    }
}

impl<T: Real> SplitClassifier<T> {
    pub fn param_indices(&self, scope: Scope) -> Vec<usize> {
        self.param_info()
            .iter()
            .enumerate()
            .filter(|(_, info)| scope.admits(info.role, info.part))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn scope_len(&self, scope: Scope) -> usize {
        self.param_indices(scope)
            .into_iter()
            .map(|i| self.params[i].len())
            .sum()
    }

    pub fn flatten(&self, scope: Scope) -> ParameterVector<T> {
        let mut values = Vec::with_capacity(self.scope_len(scope));
        let mut layout = Vec::new();
        for i in self.param_indices(scope) {
            let info = &self.param_info()[i];
            layout.push(Segment {
                param: i,
                name: info.name.clone(),
                shape: info.shape.clone(),
                offset: values.len(),
                len: self.params[i].len(),
            });
            values.extend_from_slice(&self.params[i].data);
        }
        ParameterVector {
            values,
            layout,
            scope,
        }
    }

    /// Writes a vector produced by [`flatten`](Self::flatten) back.
    pub fn unflatten(&mut self, pv: &ParameterVector<T>) -> Result<()> {
        self.write_scope(pv.scope, &pv.values)
    }

    pub fn write_scope(&mut self, scope: Scope, values: &[T]) -> Result<()> {
        let expected = self.scope_len(scope);
        if values.len() != expected {
            return Err(Error::shape(expected, values.len()));
        }
        let mut offset = 0;
        for i in self.param_indices(scope) {
            let n = self.params[i].len();
            self.params[i].data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Zeroes every pruned position of the feature-extractor weights.
    pub fn apply_mask(&mut self, mask: &SparsityMask) -> Result<()> {
        let expected = self.scope_len(Scope::Prunable);
        if mask.len() != expected {
            return Err(Error::shape(format!("mask of length {expected}"), mask.len()));
        }
        let mut offset = 0;
        for i in self.param_indices(Scope::Prunable) {
            let data = &mut self.params[i].data;
            for (v, keep) in data.iter_mut().zip(&mask.keep()[offset..]) {
                if !keep {
                    *v = T::zero();
                }
            }
            offset += data.len();
        }
        Ok(())
    }

    /// Density of the feature-extractor weights.
    pub fn prunable_density(&self) -> Result<f64> {
        density(&self.flatten(Scope::Prunable).values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchSpec, Shape3};
    use crate::seed;

    fn model() -> SplitClassifier<f32> {
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        SplitClassifier::init(arch, &mut seed::rng(1)).unwrap()
    }

    #[test]
    fn density_examples() {
        assert_eq!(density(&[0.0f32, 0.0, 0.0, 1.0]).unwrap(), 0.25);
        assert_eq!(density(&[0.0f64; 5]).unwrap(), 0.0);
        assert_eq!(density(&[1e-31f64, 1e-35, 0.0, 0.0]).unwrap(), 0.5);
        assert!(density::<f32>(&[]).is_err());
        assert_eq!(sparsity(&[0.0f32, 0.0, 0.0, 1.0]).unwrap(), 0.75);
    }

    #[test]
    fn flatten_round_trip_is_identity_for_every_scope() {
        let m = model();
        for scope in [Scope::Prunable, Scope::FeatureExtractor, Scope::Classifier, Scope::All] {
            let pv = m.flatten(scope);
            let mut copy = m.clone();
            for p in copy.params.iter_mut() {
                p.data.iter_mut().for_each(|v| *v = 0.5);
            }
            copy.unflatten(&pv).unwrap();
            assert_eq!(copy.flatten(scope), pv);
        }
        assert_eq!(
            m.scope_len(Scope::FeatureExtractor) + m.scope_len(Scope::Classifier),
            m.num_params()
        );
    }

    #[test]
    fn scopes_partition_parameters() {
        let m = model();
        let fe = m.param_indices(Scope::FeatureExtractor);
        let cl = m.param_indices(Scope::Classifier);
        assert!(fe.iter().all(|i| !cl.contains(i)));
        assert_eq!(fe.len() + cl.len(), m.params.len());
        let pr = m.param_indices(Scope::Prunable);
        assert!(pr.iter().all(|i| fe.contains(i)));
        assert!(pr.iter().all(|&i| m.param_info()[i].role == ParamRole::Weight));
    }

    #[test]
    fn all_ones_mask_leaves_model_unchanged() {
        let mut m = model();
        let before = m.clone();
        m.apply_mask(&SparsityMask::ones(m.scope_len(Scope::Prunable))).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn random_mask_bounds_density() {
        use rand::Rng;
        let mut m = model();
        let n = m.scope_len(Scope::Prunable);
        let mut rng = seed::rng(3);
        let keep: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        let mask = SparsityMask::from_keep(keep);
        m.apply_mask(&mask).unwrap();
        assert!(m.prunable_density().unwrap() <= 1.0 - mask.sparsity() + 1e-12);
    }

    #[test]
    fn mask_length_mismatch_is_rejected() {
        let mut m = model();
        assert!(m.apply_mask(&SparsityMask::ones(3)).is_err());
    }
}
