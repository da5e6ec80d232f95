//! The split classifier: parameters, forward pass with optional trace, and
//! the manual backward pass.

use rand::Rng as _;

use super::arch::{ArchSpec, LayerSpec, Shape3};
use super::real::{matmul, Real};
use crate::seed::Rng;
use crate::{Error, Result};

/// A dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Which half of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    FeatureExtractor,
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub part: Part,
    pub layer: usize,
    pub fan_in: usize,
}

/// Features `z = Φ(x)` of a batch together with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch<T> {
    pub z: Vec<T>,
    pub y: Vec<u16>,
    pub dim: usize,
}

impl<T: Real> FeatureBatch<T> {
    pub fn new(z: Vec<T>, y: Vec<u16>, dim: usize) -> Result<Self> {
        if dim == 0 || z.len() != y.len() * dim {
            return Err(Error::shape(format!("{}x{dim}", y.len()), z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        Ok(FeatureBatch { z, y, dim })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }
}

enum LayerCache<T> {
    Conv { cols: Vec<T> },
    Linear { input: Vec<T> },
    Relu { output: Vec<T> },
    Pool { argmax: Vec<u32> },
    Flatten,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Trace<T> {
    batch: usize,
    caches: Vec<LayerCache<T>>,
    /// Output of the feature extractor, `batch × feature_dim`.
    pub features: Vec<T>,
    /// Output of the classifier, `batch × num_classes`.
    pub logits: Vec<T>,
}

impl<T: Real> Trace<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Which ReLU units fired and which max-pool inputs won. The network is
    /// smooth between two parameter points with the same pattern, so
    /// finite-difference checks compare it across their stencil.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for c in &self.caches {
            match c {
                LayerCache::Relu { output } => out.extend(output.iter().map(|v| u32::from(*v > T::zero()))),
                LayerCache::Pool { argmax } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }
}

/// Which parameter gradients the backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScope {
    All,
    /// Stop at the feature boundary; extractor gradients stay zero.
    ClassifierOnly,
}

/// A feature extractor `Φ` followed by a classifier `Ω`, with all
/// parameters held in one flat list ordered by layer (weight, then bias).
#[derive(Clone, Debug, PartialEq)]
pub struct SplitClassifier<T> {
    arch: ArchSpec,
    shapes: Vec<Shape3>,
    info: Vec<ParamInfo>,
    /// Per layer, the index of its weight (bias follows at +1).
    layer_param: Vec<Option<usize>>,
    pub params: Vec<Tensor<T>>,
}

impl<T: Real> SplitClassifier<T> {
    /// All-zero parameters.
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.shapes()?;
        let mut info = Vec::new();
        let mut layer_param = Vec::with_capacity(arch.layers.len());
        let mut params = Vec::new();
        for (li, (name, layer)) in arch.layers.iter().enumerate() {
            match layer.param_shapes() {
                Some((w, b, fan_in)) => {
                    let part = if li < arch.split {
                        Part::FeatureExtractor
                    } else {
                        Part::Classifier
                    };
                    layer_param.push(Some(info.len()));
                    for (suffix, shape, role) in
                        [("weight", w, ParamRole::Weight), ("bias", b, ParamRole::Bias)]
                    {
                        params.push(Tensor::zeros(&shape));
                        info.push(ParamInfo {
                            name: format!("{name}.{suffix}"),
                            shape,
                            role,
                            part,
                            layer: li,
                            fan_in,
                        });
                    }
                }
                None => layer_param.push(None),
            }
        }
        Ok(SplitClassifier {
            arch,
            shapes,
            info,
            layer_param,
            params,
        })
    }

    /// Fan-in scaled uniform initialization: He bounds `sqrt(6 / fan_in)`
    /// for hidden layers, `1 / sqrt(fan_in)` for the output layer, zero
    /// biases.
    pub fn init(arch: ArchSpec, rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let indices: Vec<usize> = (0..model.params.len()).collect();
        model.reinit(&indices, rng);
        Ok(model)
    }

    fn reinit(&mut self, indices: &[usize], rng: &mut Rng) {
        let last_layer = self.arch.layers.len() - 1;
        for &i in indices {
            let info = &self.info[i];
            let tensor = &mut self.params[i];
            match info.role {
                ParamRole::Bias => tensor.data.iter_mut().for_each(|v| *v = T::zero()),
                ParamRole::Weight => {
                    let bound = if info.layer == last_layer {
                        1.0 / (info.fan_in as f64).sqrt()
                    } else {
                        (6.0 / info.fan_in as f64).sqrt()
                    };
                    for v in tensor.data.iter_mut() {
                        *v = T::of(rng.gen_range(-bound..bound));
                    }
                }
            }
        }
    }

    /// Re-draws every classifier parameter, as an attacker replacing the
    /// head would.
    pub fn reinit_head(&mut self, rng: &mut Rng) {
        let head: Vec<usize> = self.param_indices(super::Scope::Classifier);
        self.reinit(&head, rng);
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn param_info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn input_shape(&self) -> Shape3 {
        self.arch.input
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes[self.arch.split].len()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Converts parameters to another element type.
    pub fn cast<U: Real>(&self) -> SplitClassifier<U> {
        SplitClassifier {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            info: self.info.clone(),
            layer_param: self.layer_param.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<usize> {
        let per = self.arch.input.len();
        if x.is_empty() || !x.len().is_multiple_of(per) {
            return Err(Error::shape(
                format!("a multiple of {} ({})", per, self.arch.input),
                x.len(),
            ));
        }
        Ok(x.len() / per)
    }

    /// Logits for a batch of HWC images laid out contiguously.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let batch = self.check_input(x)?;
        let mut act = x.to_vec();
        for li in 0..self.arch.layers.len() {
            act = self.layer_forward(li, batch, act, None);
        }
        Ok(act)
    }

    /// Feature extractor output `Φ(x)`; deterministic, no stochastic layers.
    pub fn forward_features(&self, x: &[T], y: &[u16]) -> Result<FeatureBatch<T>> {
        let batch = self.check_input(x)?;
        if y.len() != batch {
            return Err(Error::shape(format!("{batch} labels"), y.len()));
        }
        let mut act = x.to_vec();
        for li in 0..self.arch.split {
            act = self.layer_forward(li, batch, act, None);
        }
        FeatureBatch::new(act, y.to_vec(), self.feature_dim())
    }

    /// Forward pass retaining everything the backward pass needs.
    pub fn forward_trace(&self, x: &[T]) -> Result<Trace<T>> {
        let batch = self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        let mut act = x.to_vec();
        let mut features = Vec::new();
        for li in 0..self.arch.layers.len() {
            if li == self.arch.split {
                features = act.clone();
            }
            act = self.layer_forward(li, batch, act, Some(&mut caches));
        }
        Ok(Trace {
            batch,
            caches,
            features,
            logits: act,
        })
    }

    fn layer_forward(
        &self,
        li: usize,
        batch: usize,
        input: Vec<T>,
        caches: Option<&mut Vec<LayerCache<T>>>,
    ) -> Vec<T> {
        let in_shape = self.shapes[li];
        let out_shape = self.shapes[li + 1];
        let layer = &self.arch.layers[li].1;
        match *layer {
            LayerSpec::Conv2d {
                kernel, padding, ..
            } => {
                let wi = self.layer_param[li].unwrap();
                let weight = &self.params[wi].data;
                let bias = &self.params[wi + 1].data;
                let k = kernel * kernel * in_shape.c;
                let rows = batch * out_shape.h * out_shape.w;
                let cols = im2col(&input, batch, in_shape, out_shape, kernel, padding);
                let mut out = vec![T::zero(); rows * out_shape.c];
                for row in out.chunks_exact_mut(out_shape.c) {
                    row.copy_from_slice(bias);
                }
                matmul(rows, k, out_shape.c, &cols, false, weight, false, &mut out, true);
                if let Some(c) = caches {
                    c.push(LayerCache::Conv { cols });
                }
                out
            }
            LayerSpec::Linear { inputs, outputs } => {
                let wi = self.layer_param[li].unwrap();
                let weight = &self.params[wi].data;
                let bias = &self.params[wi + 1].data;
                let mut out = vec![T::zero(); batch * outputs];
                for row in out.chunks_exact_mut(outputs) {
                    row.copy_from_slice(bias);
                }
                matmul(batch, inputs, outputs, &input, false, weight, false, &mut out, true);
                if let Some(c) = caches {
                    c.push(LayerCache::Linear { input });
                }
                out
            }
            LayerSpec::Relu => {
                let mut out = input;
                for v in out.iter_mut() {
                    if !(*v > T::zero()) {
                        *v = T::zero();
                    }
                }
                if let Some(c) = caches {
                    c.push(LayerCache::Relu {
                        output: out.clone(),
                    });
                }
                out
            }
            LayerSpec::MaxPool2 => {
                let (out, argmax) = maxpool2(&input, batch, in_shape, out_shape);
                if let Some(c) = caches {
                    c.push(LayerCache::Pool { argmax });
                }
                out
            }
            LayerSpec::Flatten => {
                if let Some(c) = caches {
                    c.push(LayerCache::Flatten);
                }
                input
            }
        }
    }

    /// Parameter gradients given upstream gradients at the features and/or
    /// logits of a traced batch.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        d_features: Option<&[T]>,
        d_logits: Option<&[T]>,
        scope: GradScope,
    ) -> Result<Vec<Tensor<T>>> {
        let batch = trace.batch;
        let split = self.arch.split;
        if let Some(d) = d_features {
            if d.len() != batch * self.feature_dim() {
                return Err(Error::shape(batch * self.feature_dim(), d.len()));
            }
        }
        if let Some(d) = d_logits {
            if d.len() != batch * self.num_classes() {
                return Err(Error::shape(batch * self.num_classes(), d.len()));
            }
        }
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        let lowest = match scope {
            GradScope::All => 0,
            GradScope::ClassifierOnly => split,
        };
        let mut upstream: Option<Vec<T>> = d_logits.map(<[T]>::to_vec);
        for li in (lowest..self.arch.layers.len()).rev() {
            if li + 1 == split {
                if let Some(d) = d_features {
                    match upstream.as_mut() {
                        Some(g) => g.iter_mut().zip(d).for_each(|(a, b)| *a += *b),
                        None => upstream = Some(d.to_vec()),
                    }
                }
            }
            let Some(g) = upstream.take() else { continue };
            let need_input_grad = li > lowest;
            upstream = self.layer_backward(li, batch, &trace.caches[li], g, &mut grads, need_input_grad);
        }
        Ok(grads)
    }

    fn layer_backward(
        &self,
        li: usize,
        batch: usize,
        cache: &LayerCache<T>,
        grad_out: Vec<T>,
        grads: &mut [Tensor<T>],
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        let in_shape = self.shapes[li];
        let out_shape = self.shapes[li + 1];
        match (&self.arch.layers[li].1, cache) {
            (LayerSpec::Conv2d { kernel, padding, .. }, LayerCache::Conv { cols }) => {
                let wi = self.layer_param[li].unwrap();
                let k = kernel * kernel * in_shape.c;
                let rows = batch * out_shape.h * out_shape.w;
                let cout = out_shape.c;
                matmul(k, rows, cout, cols, true, &grad_out, false, &mut grads[wi].data, false);
                let db = &mut grads[wi + 1].data;
                for row in grad_out.chunks_exact(cout) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                }
                if !need_input_grad {
                    return None;
                }
                let mut dcols = vec![T::zero(); rows * k];
                matmul(rows, cout, k, &grad_out, false, &self.params[wi].data, true, &mut dcols, false);
                Some(col2im(&dcols, batch, in_shape, out_shape, *kernel, *padding))
            }
            (LayerSpec::Linear { inputs, outputs }, LayerCache::Linear { input }) => {
                let wi = self.layer_param[li].unwrap();
                matmul(*inputs, batch, *outputs, input, true, &grad_out, false, &mut grads[wi].data, false);
                let db = &mut grads[wi + 1].data;
                for row in grad_out.chunks_exact(*outputs) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                }
                if !need_input_grad {
                    return None;
                }
                let mut dx = vec![T::zero(); batch * inputs];
                matmul(batch, *outputs, *inputs, &grad_out, false, &self.params[wi].data, true, &mut dx, false);
                Some(dx)
            }
            (LayerSpec::Relu, LayerCache::Relu { output }) => {
                if !need_input_grad {
                    return None;
                }
                let mut g = grad_out;
                g.iter_mut().zip(output).for_each(|(d, o)| {
                    if !(*o > T::zero()) {
                        *d = T::zero();
                    }
                });
                Some(g)
            }
            (LayerSpec::MaxPool2, LayerCache::Pool { argmax }) => {
                if !need_input_grad {
                    return None;
                }
                let mut dx = vec![T::zero(); batch * in_shape.len()];
                for (g, &src) in grad_out.iter().zip(argmax) {
                    dx[src as usize] += *g;
                }
                Some(dx)
            }
            (LayerSpec::Flatten, LayerCache::Flatten) => need_input_grad.then_some(grad_out),
            _ => unreachable!("trace does not match architecture"),
        }
    }
}

fn im2col<T: Real>(
    x: &[T],
    batch: usize,
    ins: Shape3,
    outs: Shape3,
    kernel: usize,
    pad: usize,
) -> Vec<T> {
    let c = ins.c;
    let k = kernel * kernel * c;
    let mut cols = vec![T::zero(); batch * outs.h * outs.w * k];
    let mut row = 0;
    for b in 0..batch {
        let img = &x[b * ins.len()..(b + 1) * ins.len()];
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..kernel {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= ins.h {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..kernel {
                        let ix = ox + kx;
                        if ix < pad || ix - pad >= ins.w {
                            continue;
                        }
                        let ix = ix - pad;
                        let src = (iy * ins.w + ix) * c;
                        let off = (ky * kernel + kx) * c;
                        dst[off..off + c].copy_from_slice(&img[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Real>(
    dcols: &[T],
    batch: usize,
    ins: Shape3,
    outs: Shape3,
    kernel: usize,
    pad: usize,
) -> Vec<T> {
    let c = ins.c;
    let k = kernel * kernel * c;
    let mut dx = vec![T::zero(); batch * ins.len()];
    let mut row = 0;
    for b in 0..batch {
        let img = &mut dx[b * ins.len()..(b + 1) * ins.len()];
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let src = &dcols[row * k..(row + 1) * k];
                for ky in 0..kernel {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= ins.h {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..kernel {
                        let ix = ox + kx;
                        if ix < pad || ix - pad >= ins.w {
                            continue;
                        }
                        let ix = ix - pad;
                        let dst = (iy * ins.w + ix) * c;
                        let off = (ky * kernel + kx) * c;
                        img[dst..dst + c]
                            .iter_mut()
                            .zip(&src[off..off + c])
                            .for_each(|(a, b)| *a += *b);
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

fn maxpool2<T: Real>(x: &[T], batch: usize, ins: Shape3, outs: Shape3) -> (Vec<T>, Vec<u32>) {
    let c = ins.c;
    let mut out = Vec::with_capacity(batch * outs.len());
    let mut argmax = Vec::with_capacity(batch * outs.len());
    for b in 0..batch {
        let base = b * ins.len();
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                for ch in 0..c {
                    let mut best = base + ((2 * oy) * ins.w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + ((2 * oy + dy) * ins.w + 2 * ox + dx) * c + ch;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    (out, argmax)
}
