//! Split-network abstraction: feature extractor + classifier, gradient
//! oracle, masks and mask-respecting updates.

mod arch;
pub mod checkpoint;
mod network;
mod optim;
mod params;
mod real;

pub use arch::{ArchSpec, LayerSpec, Shape3};
pub use network::{
    FeatureBatch, GradScope, ParamInfo, ParamRole, Part, SplitClassifier, Tensor, Trace,
};
pub use optim::{masked_step, Adam, Optimizer, Sgd};
pub use params::{density, sparsity, ParameterVector, Scope, Segment, SparsityMask};
pub use real::{matmul, Real};

use crate::{Error, Result};

/// Images (HWC, contiguous) and labels for one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub x: Vec<T>,
    pub y: Vec<u16>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Model outputs handed to a [`BatchLoss`].
pub struct Outputs<'a, T> {
    pub features: &'a [T],
    pub logits: &'a [T],
    pub labels: &'a [u16],
    pub feature_dim: usize,
    pub num_classes: usize,
}

/// Loss value plus its gradients with respect to the features and logits.
pub struct OutputGrad<T> {
    pub value: T,
    pub d_features: Option<Vec<T>>,
    pub d_logits: Option<Vec<T>>,
}

/// A differentiable scalar loss of one batch.
pub trait BatchLoss<T: Real> {
    fn outputs(&self, out: &Outputs<'_, T>) -> Result<OutputGrad<T>>;

    /// Optional term that depends on the parameters directly, returned as
    /// value and parameter-aligned gradient.
    fn params(&self, _model: &SplitClassifier<T>) -> Option<(T, Vec<Tensor<T>>)> {
        None
    }
}

/// Loss value and parameter-aligned gradient of `loss` on a batch.
pub fn gradient<T: Real>(
    model: &SplitClassifier<T>,
    loss: &dyn BatchLoss<T>,
    batch: &Batch<T>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let trace = model.forward_trace(&batch.x)?;
    if batch.y.len() != trace.batch() {
        return Err(Error::shape(trace.batch(), batch.y.len()));
    }
    let grad = loss.outputs(&Outputs {
        features: &trace.features,
        logits: &trace.logits,
        labels: &batch.y,
        feature_dim: model.feature_dim(),
        num_classes: model.num_classes(),
    })?;
    let mut value = grad.value;
    let mut grads = model.backward(
        &trace,
        grad.d_features.as_deref(),
        grad.d_logits.as_deref(),
        GradScope::All,
    )?;
    if let Some((pv, pg)) = loss.params(model) {
        value += pv;
        add_grads(&mut grads, &pg);
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((value, grads))
}

/// `acc += other`, tensor by tensor.
pub fn add_grads<T: Real>(acc: &mut [Tensor<T>], other: &[Tensor<T>]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += *y);
    }
}

/// Index of the largest logit per row.
pub fn argmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    struct Constant;
    impl BatchLoss<f64> for Constant {
        fn outputs(&self, _: &Outputs<'_, f64>) -> Result<OutputGrad<f64>> {
            Ok(OutputGrad {
                value: 3.0,
                d_features: None,
                d_logits: None,
            })
        }
    }

    struct HalfSquaredNorm;
    impl BatchLoss<f64> for HalfSquaredNorm {
        fn outputs(&self, _: &Outputs<'_, f64>) -> Result<OutputGrad<f64>> {
            Ok(OutputGrad {
                value: 0.0,
                d_features: None,
                d_logits: None,
            })
        }
        fn params(&self, model: &SplitClassifier<f64>) -> Option<(f64, Vec<Tensor<f64>>)> {
            let v = model
                .params
                .iter()
                .flat_map(|t| t.data.iter())
                .map(|w| 0.5 * w * w)
                .sum();
            Some((v, model.params.clone()))
        }
    }

    struct CrossEntropy;
    impl BatchLoss<f64> for CrossEntropy {
        fn outputs(&self, out: &Outputs<'_, f64>) -> Result<OutputGrad<f64>> {
            let (value, d) = crate::objective::cross_entropy(out.logits, out.labels, out.num_classes)?;
            Ok(OutputGrad {
                value,
                d_features: None,
                d_logits: Some(d),
            })
        }
    }

    fn micro() -> (SplitClassifier<f64>, Batch<f64>) {
        use rand::Rng;
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        let model = SplitClassifier::init(arch, &mut seed::rng(11)).unwrap();
        let mut rng = seed::rng(12);
        let x = (0..4 * 192).map(|_| rng.gen::<f64>()).collect();
        (model, Batch { x, y: vec![0, 1, 2, 0] })
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (model, batch) = micro();
        let (v, g) = gradient(&model, &Constant, &batch).unwrap();
        assert_eq!(v, 3.0);
        assert!(g.iter().all(|t| t.data.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn half_squared_norm_gradient_is_the_weights() {
        let (model, batch) = micro();
        let (_, g) = gradient(&model, &HalfSquaredNorm, &batch).unwrap();
        assert_eq!(g, model.params);
    }

    #[test]
    fn gradient_shapes_mirror_parameters() {
        let (model, batch) = micro();
        let (_, g) = gradient(&model, &Constant, &batch).unwrap();
        for (a, b) in g.iter().zip(&model.params) {
            assert_eq!(a.shape, b.shape);
        }
    }

    /// Relative error of the cross-entropy gradient against central
    /// differences, or `None` when a step of `h` flips a ReLU or max-pool
    /// winner somewhere, where the difference quotient is no oracle.
    fn ce_check(model: &mut SplitClassifier<f64>, batch: &Batch<f64>, h: f64) -> Option<f64> {
        let (_, g) = gradient(model, &CrossEntropy, batch).unwrap();
        let base = model.forward_trace(&batch.x).unwrap().activation_pattern();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..model.params.len() {
            for j in 0..model.params[i].len() {
                let w = model.params[i].data[j];
                let mut f = [0.0; 2];
                for (k, step) in [h, -h].into_iter().enumerate() {
                    model.params[i].data[j] = w + step;
                    if model.forward_trace(&batch.x).unwrap().activation_pattern() != base {
                        return None;
                    }
                    f[k] = gradient(model, &CrossEntropy, batch).unwrap().0;
                }
                model.params[i].data[j] = w;
                let fd = (f[0] - f[1]) / (2.0 * h);
                diff += (fd - g[i].data[j]).powi(2);
                norm += fd * fd;
            }
        }
        Some(diff.sqrt() / norm.sqrt())
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences() {
        let (_, batch) = micro();
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        let mut checked = 0;
        for s in 0..10 {
            let mut model = SplitClassifier::init(arch.clone(), &mut seed::rng(100 + s)).unwrap();
            if let Some(err) = ce_check(&mut model, &batch, 1e-4) {
                assert!(err < 1e-3, "seed {s}: {err}");
                checked += 1;
            }
        }
        assert!(checked >= 3, "only {checked} kink-free points");
    }

    #[test]
    fn rows_do_not_depend_on_the_batch() {
        use rand::Rng;
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        let model = SplitClassifier::<f32>::init(arch, &mut seed::rng(13)).unwrap();
        let mut rng = seed::rng(14);
        let x: Vec<f32> = (0..8 * 192).map(|_| rng.gen()).collect();
        let all = model.forward(&x).unwrap();
        for i in 0..8 {
            let one = model.forward(&x[i * 192..(i + 1) * 192]).unwrap();
            for (a, b) in one.iter().zip(&all[i * 3..(i + 1) * 3]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
