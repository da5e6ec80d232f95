//! Sequential architecture descriptions and the built-in registry.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-sample activation shape in HWC order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape3 { h, w, c }
    }

    pub const fn flat(n: usize) -> Self {
        Shape3 { h: 1, w: 1, c: n }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Stride-1 convolution with square kernel and symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// 2×2 max pooling with stride 2.
    MaxPool2,
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. })
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                if input.c != in_channels {
                    return Err(Error::shape(format!("{in_channels} channels"), input));
                }
                let h = (input.h + 2 * padding + 1)
                    .checked_sub(kernel)
                    .filter(|&h| h > 0)
                    .ok_or_else(|| Error::shape(format!("input >= kernel {kernel}"), input))?;
                let w = (input.w + 2 * padding + 1)
                    .checked_sub(kernel)
                    .filter(|&w| w > 0)
                    .ok_or_else(|| Error::shape(format!("input >= kernel {kernel}"), input))?;
                Ok(Shape3::new(h, w, out_channels))
            }
            LayerSpec::Linear { inputs, outputs } => {
                if input.h != 1 || input.w != 1 || input.c != inputs {
                    return Err(Error::shape(format!("1x1x{inputs}"), input));
                }
                Ok(Shape3::flat(outputs))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool2 => {
                if input.h < 2 || input.w < 2 {
                    return Err(Error::shape("spatial size >= 2", input));
                }
                Ok(Shape3::new(input.h / 2, input.w / 2, input.c))
            }
            LayerSpec::Flatten => Ok(Shape3::flat(input.len())),
        }
    }

    /// `(weight shape, bias shape, fan_in)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![kernel, kernel, in_channels, out_channels],
                vec![out_channels],
                kernel * kernel * in_channels,
            )),
            LayerSpec::Linear { inputs, outputs } => {
                Some((vec![inputs, outputs], vec![outputs], inputs))
            }
            _ => None,
        }
    }
}

/// A sequential network cut into a feature extractor (`layers[..split]`)
/// and a classifier head (`layers[split..]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub id: String,
    pub input: Shape3,
    pub num_classes: usize,
    pub layers: Vec<(String, LayerSpec)>,
    pub split: usize,
}

impl ArchSpec {
    /// Shapes after every layer, starting with the input shape.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        shapes.push(self.input);
        for (name, layer) in &self.layers {
            let next = layer.output_shape(*shapes.last().unwrap()).map_err(|e| {
                Error::invalid(format!("architecture {} layer {name}: {e}", self.id))
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.split == 0 || self.split >= self.layers.len() {
            return Err(Error::invalid(format!(
                "architecture {}: split {} must leave both parts nonempty",
                self.id, self.split
            )));
        }
        let shapes = self.shapes()?;
        let out = shapes.last().unwrap();
        if *out != Shape3::flat(self.num_classes) {
            return Err(Error::invalid(format!(
                "architecture {}: output {out} does not match {} classes",
                self.id, self.num_classes
            )));
        }
        if !self.layers[..self.split].iter().any(|(_, l)| l.has_params())
            || !self.layers[self.split..].iter().any(|(_, l)| l.has_params())
        {
            return Err(Error::invalid(format!(
                "architecture {}: both parts need trainable layers",
                self.id
            )));
        }
        Ok(())
    }

    pub fn feature_shape(&self) -> Result<Shape3> {
        Ok(self.shapes()?[self.split])
    }

    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.feature_shape()?.len())
    }

    /// Builds a registered architecture by id.
    ///
    /// - `tiny_cnn`: 2 conv blocks + 2 linear layers on 32×32×3 (≈51k
    ///   parameters with 10 classes). The reference fixture network.
    /// - `micro_cnn`: the same topology on 8×8×3 with ≈1k parameters, used
    ///   for finite-difference checks.
    /// - `mlp`: one hidden layer on any flattened input.
    /// - `vgg11`: the CIFAR-style VGG-11 stack on 32×32×3.
    pub fn registry(id: &str, input: Shape3, num_classes: usize) -> Result<ArchSpec> {
        if num_classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        let conv = |i, o| LayerSpec::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            padding: 1,
        };
        let lin = |i, o| LayerSpec::Linear {
            inputs: i,
            outputs: o,
        };
        let named = |v: Vec<(&str, LayerSpec)>| -> Vec<(String, LayerSpec)> {
            v.into_iter().map(|(n, l)| (n.to_string(), l)).collect()
        };
        let (layers, split) = match id {
            "tiny_cnn" | "micro_cnn" => {
                let (c1, c2, hidden) = if id == "tiny_cnn" { (8, 16, 48) } else { (4, 8, 16) };
                let flat = (input.h / 4) * (input.w / 4) * c2;
                (
                    named(vec![
                        ("conv1", conv(input.c, c1)),
                        ("relu1", LayerSpec::Relu),
                        ("pool1", LayerSpec::MaxPool2),
                        ("conv2", conv(c1, c2)),
                        ("relu2", LayerSpec::Relu),
                        ("pool2", LayerSpec::MaxPool2),
                        ("flatten", LayerSpec::Flatten),
                        ("fc1", lin(flat, hidden)),
                        ("relu3", LayerSpec::Relu),
                        ("fc2", lin(hidden, num_classes)),
                    ]),
                    9,
                )
            }
            "mlp" => (
                named(vec![
                    ("flatten", LayerSpec::Flatten),
                    ("fc1", lin(input.len(), 32)),
                    ("relu1", LayerSpec::Relu),
                    ("fc2", lin(32, num_classes)),
                ]),
                3,
            ),
            "vgg11" => {
                let plan: [Option<usize>; 13] = [
                    Some(64),
                    None,
                    Some(128),
                    None,
                    Some(256),
                    Some(256),
                    None,
                    Some(512),
                    Some(512),
                    None,
                    Some(512),
                    Some(512),
                    None,
                ];
                let mut layers = Vec::new();
                let mut channels = input.c;
                let (mut nconv, mut npool) = (0, 0);
                for step in plan {
                    match step {
                        Some(out) => {
                            nconv += 1;
                            layers.push((format!("conv{nconv}"), conv(channels, out)));
                            layers.push((format!("relu{nconv}"), LayerSpec::Relu));
                            channels = out;
                        }
                        None => {
                            npool += 1;
                            layers.push((format!("pool{npool}"), LayerSpec::MaxPool2));
                        }
                    }
                }
                layers.push(("flatten".into(), LayerSpec::Flatten));
                let split = layers.len();
                let flat = (input.h >> 5).max(1) * (input.w >> 5).max(1) * channels;
                layers.push(("classifier".into(), lin(flat, num_classes)));
                (layers, split)
            }
            other => return Err(Error::invalid(format!("unknown architecture '{other}'"))),
        };
        let spec = ArchSpec {
            id: id.to_string(),
            input,
            num_classes,
            layers,
            split,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_count(spec: &ArchSpec) -> usize {
        spec.layers
            .iter()
            .filter_map(|(_, l)| l.param_shapes())
            .map(|(w, b, _)| w.iter().product::<usize>() + b[0])
            .sum()
    }

    #[test]
    fn tiny_cnn_is_about_fifty_thousand_parameters() {
        let spec = ArchSpec::registry("tiny_cnn", Shape3::new(32, 32, 3), 10).unwrap();
        assert_eq!(param_count(&spec), 51_082);
        assert_eq!(spec.feature_dim().unwrap(), 48);
    }

    #[test]
    fn micro_cnn_fits_gradient_check_budget() {
        let spec = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 4).unwrap();
        assert!(param_count(&spec) <= 5_000);
    }

    #[test]
    fn vgg11_builds() {
        let spec = ArchSpec::registry("vgg11", Shape3::new(32, 32, 3), 10).unwrap();
        assert_eq!(spec.feature_dim().unwrap(), 512);
        assert_eq!(param_count(&spec), 9_225_610);
    }

    #[test]
    fn unknown_and_degenerate_requests_fail() {
        assert!(ArchSpec::registry("resnet9000", Shape3::new(32, 32, 3), 10).is_err());
        assert!(ArchSpec::registry("tiny_cnn", Shape3::new(32, 32, 3), 1).is_err());
        assert!(ArchSpec::registry("tiny_cnn", Shape3::new(2, 2, 3), 10).is_err());
    }
}
