//! First-order optimizers and the mask-respecting update.

use super::network::{SplitClassifier, Tensor};
use super::params::{Scope, SparsityMask};
use super::real::Real;
use crate::{Error, Result};

pub trait Optimizer<T: Real> {
    /// Updates `params[i]` for every `i` with `trainable[i]`.
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, trainable: &[bool]);
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sgd;

impl<T: Real> Optimizer<T> for Sgd {
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, trainable: &[bool]) {
        let lr = T::of(lr);
        for ((p, g), _) in params.iter_mut().zip(grads).zip(trainable).filter(|(_, t)| **t) {
            p.data.iter_mut().zip(&g.data).for_each(|(w, d)| *w -= lr * *d);
        }
    }
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, trainable: &[bool]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let lr = T::of(lr);
        let eps = T::of(self.eps);
        let one = T::one();
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, g), (mi, vi)) in params[i]
                .data
                .iter_mut()
                .zip(&grads[i].data)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (one - b1) * *g;
                *vi = b2 * *vi + (one - b2) * *g * *g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One optimizer step that keeps pruned feature-extractor weights at
/// exactly zero. Gradients at pruned positions are discarded before the
/// optimizer sees them.
pub fn masked_step<T: Real>(
    model: &mut SplitClassifier<T>,
    optimizer: &mut dyn Optimizer<T>,
    mut grads: Vec<Tensor<T>>,
    lr: f64,
    mask: Option<&SparsityMask>,
    trainable: &[bool],
) -> Result<()> {
    if grads.len() != model.params.len() || trainable.len() != model.params.len() {
        return Err(Error::shape(model.params.len(), grads.len().min(trainable.len())));
    }
    for (g, p) in grads.iter().zip(&model.params) {
        if g.shape != p.shape {
            return Err(Error::shape(format!("{:?}", p.shape), format!("{:?}", g.shape)));
        }
    }
    let prunable = model.param_indices(Scope::Prunable);
    if let Some(mask) = mask {
        let expected = model.scope_len(Scope::Prunable);
        if mask.len() != expected {
            return Err(Error::shape(format!("mask of length {expected}"), mask.len()));
        }
        let mut offset = 0;
        for &i in &prunable {
            let keep = &mask.keep()[offset..offset + grads[i].len()];
            grads[i]
                .data
                .iter_mut()
                .zip(keep)
                .filter(|(_, k)| !**k)
                .for_each(|(g, _)| *g = T::zero());
            offset += grads[i].len();
        }
    }
    optimizer.step(&mut model.params, &grads, lr, trainable);
    if let Some(mask) = mask {
        model.apply_mask(mask)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchSpec, Shape3};
    use crate::seed;
    use rand::Rng;

    fn setup() -> (SplitClassifier<f32>, SparsityMask) {
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        let mut model = SplitClassifier::init(arch, &mut seed::rng(5)).unwrap();
        let mut rng = seed::rng(6);
        let n = model.scope_len(Scope::Prunable);
        let mask = SparsityMask::from_keep((0..n).map(|_| rng.gen_bool(0.3)).collect());
        model.apply_mask(&mask).unwrap();
        (model, mask)
    }

    fn random_grads(model: &SplitClassifier<f32>, rng: &mut crate::seed::Rng) -> Vec<Tensor<f32>> {
        model
            .params
            .iter()
            .map(|p| Tensor {
                shape: p.shape.clone(),
                data: (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    #[test]
    fn masked_entries_stay_zero_under_nonzero_gradients() {
        let (mut model, mask) = setup();
        let mut rng = seed::rng(7);
        let trainable = vec![true; model.params.len()];
        let mut adam = Adam::new();
        let mut last = model.prunable_density().unwrap();
        for _ in 0..100 {
            let g = random_grads(&model, &mut rng);
            masked_step(&mut model, &mut adam, g, 1e-2, Some(&mask), &trainable).unwrap();
            let w = model.flatten(Scope::Prunable).values;
            for (v, k) in w.iter().zip(mask.keep()) {
                if !k {
                    assert_eq!(*v, 0.0);
                }
            }
            let d = model.prunable_density().unwrap();
            assert!(d <= last);
            last = d;
        }
    }

    #[test]
    fn all_ones_mask_matches_an_ordinary_step() {
        let (model, _) = setup();
        let mut rng = seed::rng(8);
        let g = random_grads(&model, &mut rng);
        let trainable = vec![true; model.params.len()];
        let ones = SparsityMask::ones(model.scope_len(Scope::Prunable));
        let mut a = model.clone();
        let mut b = model.clone();
        masked_step(&mut a, &mut Adam::new(), g.clone(), 1e-3, Some(&ones), &trainable).unwrap();
        Adam::new().step(&mut b.params, &g, 1e-3, &trainable);
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (model, _) = setup();
        let mut rng = seed::rng(9);
        let g = random_grads(&model, &mut rng);
        let head = model.param_indices(Scope::Classifier);
        let trainable: Vec<bool> = (0..model.params.len()).map(|i| head.contains(&i)).collect();
        let mut m = model.clone();
        masked_step(&mut m, &mut Sgd, g, 0.1, None, &trainable).unwrap();
        for i in 0..m.params.len() {
            assert_eq!(m.params[i] == model.params[i], !trainable[i]);
        }
    }
}
