//! One-shot magnitude pruning of the feature-extractor weights.

use serde::{Deserialize, Serialize};

use crate::model::{Real, Scope, SparsityMask, SplitClassifier};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    /// One threshold across all prunable weights.
    Global,
    /// The same fraction removed from every layer separately.
    PerLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnitudePruneConfig {
    pub sparsity: f64,
    pub scope: PruneScope,
}

impl Default for MagnitudePruneConfig {
    fn default() -> Self {
        MagnitudePruneConfig {
            sparsity: 0.5,
            scope: PruneScope::Global,
        }
    }
}

/// Keep-flags that drop the `round(s·n)` entries of smallest score. Ties
/// are broken by position: the lower index is dropped first.
pub fn smallest_k_mask(scores: &[f64], sparsity: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::invalid(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let prune = (sparsity * scores.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut keep = vec![true; scores.len()];
    for &i in &order[..prune] {
        keep[i] = false;
    }
    Ok(keep)
}

/// Zeroes the smallest-magnitude fraction `cfg.sparsity` of the
/// feature-extractor weights and returns the pruned copy with its mask.
pub fn one_shot_magnitude_prune<T: Real>(
    model: &SplitClassifier<T>,
    cfg: &MagnitudePruneConfig,
) -> Result<(SplitClassifier<T>, SparsityMask)> {
    let w = model.flatten(Scope::Prunable);
    let keep = match cfg.scope {
        PruneScope::Global => {
            let scores: Vec<f64> = w.values.iter().map(|v| v.f64().abs()).collect();
            smallest_k_mask(&scores, cfg.sparsity)?
        }
        PruneScope::PerLayer => {
            let mut keep = Vec::with_capacity(w.len());
            for seg in &w.layout {
                let scores: Vec<f64> = w.values[seg.offset..seg.offset + seg.len]
                    .iter()
                    .map(|v| v.f64().abs())
                    .collect();
                keep.extend(smallest_k_mask(&scores, cfg.sparsity)?);
            }
            keep
        }
    };
    let mask = SparsityMask::from_keep(keep);
    let mut pruned = model.clone();
    pruned.apply_mask(&mask)?;
    Ok((pruned, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchSpec, Shape3};
    use crate::seed;

    #[test]
    fn order_statistics() {
        let keep = smallest_k_mask(&[0.1, 0.5, 0.2, 0.9], 0.5).unwrap();
        assert_eq!(keep, vec![false, true, false, true]);
        assert_eq!(smallest_k_mask(&[0.1, 0.5], 0.0).unwrap(), vec![true, true]);
        assert!(smallest_k_mask(&[0.1], 1.0).is_err());
    }

    #[test]
    fn ties_prune_lower_indices_first() {
        let keep = smallest_k_mask(&[0.3, 0.3, 0.3, 0.9], 0.5).unwrap();
        assert_eq!(keep, vec![false, false, true, true]);
    }

    #[test]
    fn model_level_density_and_sign_symmetry() {
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        let model = SplitClassifier::<f64>::init(arch, &mut seed::rng(4)).unwrap();
        let n = model.scope_len(Scope::Prunable) as f64;
        for scope in [PruneScope::Global, PruneScope::PerLayer] {
            let cfg = MagnitudePruneConfig { sparsity: 0.7, scope };
            let (pruned, mask) = one_shot_magnitude_prune(&model, &cfg).unwrap();
            let d = pruned.prunable_density().unwrap();
            assert!((d - 0.3).abs() <= 1.0 / n + 1e-12, "{scope:?}: {d}");
            let mut flipped = model.clone();
            flipped.params.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = -*v));
            assert_eq!(one_shot_magnitude_prune(&flipped, &cfg).unwrap().1, mask);
        }
        let (same, mask) = one_shot_magnitude_prune(&model, &MagnitudePruneConfig { sparsity: 0.0, ..Default::default() }).unwrap();
        assert_eq!(mask, SparsityMask::ones(n as usize));
        assert_eq!(same, model);
    }
}
