//! Parameterized layers and sequential blocks with explicit tapes.

use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::param::Parameter;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    /// Flattens all non-batch axes first.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    LeakyRelu {
        alpha: f64,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            }
            | LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 {
                    return Err(Error::invalid(format!("invalid layer spec {self:?}")));
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(Error::invalid(format!("invalid layer spec {self:?}")));
                }
            }
            LayerSpec::LeakyRelu { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid(format!(
                        "leaky_relu alpha must lie in (0, 1), got {alpha}"
                    )));
                }
            }
            LayerSpec::Sigmoid => {}
        }
        Ok(())
    }

    /// Per-item output shape (no batch axis) for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            }
            | LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return Err(Error::shape("layer", &[in_channels, 0, 0], input));
                };
                if c != in_channels {
                    return Err(Error::shape("layer", &[in_channels, h, w], input));
                }
                let out = if matches!(self, LayerSpec::Conv { .. }) {
                    ops::conv2d_output_hw(h, w, kernel_size, stride, padding)
                } else {
                    ops::conv_transpose2d_output_hw(h, w, kernel_size, stride, padding)
                };
                let (oh, ow) = out.ok_or_else(|| {
                    Error::invalid(format!("{self:?} yields an empty output for {input:?}"))
                })?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let len: usize = input.iter().product();
                if len != in_features {
                    return Err(Error::shape("dense", &[in_features], input));
                }
                Ok(vec![out_features])
            }
            LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => Ok(input.to_vec()),
        }
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_size, kernel_size],
                vec![out_channels],
            )),
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((
                vec![in_channels, out_channels, kernel_size, kernel_size],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
                ..
            }
            | LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => {
                let taps = kernel_size * kernel_size;
                (in_channels * taps, out_channels * taps)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (in_features, out_features),
            _ => (0, 0),
        }
    }

    fn activation(&self) -> Option<Activation> {
        match *self {
            LayerSpec::LeakyRelu { alpha } => Some(Activation::LeakyRelu { alpha }),
            LayerSpec::Sigmoid => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    weight: Option<Parameter>,
    bias: Option<Parameter>,
}

impl Layer {
    /// Glorot-uniform weights drawn from `rng`, zero biases.
    pub fn init(spec: LayerSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let Some((ws, bs)) = spec.param_shapes() else {
            return Ok(Self {
                spec,
                weight: None,
                bias: None,
            });
        };
        let (fan_in, fan_out) = spec.fans();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Tensor::from_fn(&ws, |_| rng.uniform_range(-limit, limit));
        Self::with_params(spec, Some(weight), Some(Tensor::zeros(&bs)))
    }

    pub fn with_params(
        spec: LayerSpec,
        weight: Option<Tensor>,
        bias: Option<Tensor>,
    ) -> Result<Self> {
        spec.validate()?;
        match (spec.param_shapes(), weight, bias) {
            (None, None, None) => Ok(Self {
                spec,
                weight: None,
                bias: None,
            }),
            (Some((ws, bs)), Some(w), Some(b)) => {
                if w.shape() != ws.as_slice() {
                    return Err(Error::shape("layer weight", &ws, w.shape()));
                }
                if b.shape() != bs.as_slice() {
                    return Err(Error::shape("layer bias", &bs, b.shape()));
                }
                Ok(Self {
                    spec,
                    weight: Some(Parameter::new(w)),
                    bias: Some(Parameter::new(b)),
                })
            }
            _ => Err(Error::invalid(format!(
                "parameter presence does not match layer kind {spec:?}"
            ))),
        }
    }

    pub fn activation(spec: LayerSpec) -> Result<Self> {
        Self::with_params(spec, None, None)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> Option<&Parameter> {
        self.weight.as_ref()
    }

    pub fn bias(&self) -> Option<&Parameter> {
        self.bias.as_ref()
    }

    pub(crate) fn replace_params(&mut self, weight: Parameter, bias: Parameter) -> Result<()> {
        let (ws, bs) = self
            .spec
            .param_shapes()
            .ok_or_else(|| Error::invalid("layer has no parameters"))?;
        if weight.shape() != ws.as_slice() || bias.shape() != bs.as_slice() {
            return Err(Error::shape("replace_params", &ws, weight.shape()));
        }
        self.weight = Some(weight);
        self.bias = Some(bias);
        Ok(())
    }

    fn wb(&self) -> (&Tensor, &Tensor) {
        (
            &self.weight.as_ref().expect("parameterized layer").value,
            &self.bias.as_ref().expect("parameterized layer").value,
        )
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self.spec {
            LayerSpec::Conv {
                stride, padding, ..
            } => {
                let (w, b) = self.wb();
                ops::conv2d_forward(x, w, b, stride, padding)
            }
            LayerSpec::ConvTranspose {
                stride, padding, ..
            } => {
                let (w, b) = self.wb();
                ops::conv_transpose2d_forward(x, w, b, stride, padding)
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = self.wb();
                ops::dense_forward(x, w, b)
            }
            LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => {
                Ok(ops::activation_forward(x, self.spec.activation().unwrap()))
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &mut self,
        input: &Tensor,
        output: &Tensor,
        upstream: &Tensor,
    ) -> Result<Tensor> {
        let grads = match self.spec {
            LayerSpec::Conv {
                stride, padding, ..
            } => ops::conv2d_backward(input, self.wb().0, stride, padding, upstream)?,
            LayerSpec::ConvTranspose {
                stride, padding, ..
            } => ops::conv_transpose2d_backward(input, self.wb().0, stride, padding, upstream)?,
            LayerSpec::Dense { .. } => ops::dense_backward(input, self.wb().0, upstream)?,
            LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => {
                return ops::activation_backward(
                    input,
                    output,
                    upstream,
                    self.spec.activation().unwrap(),
                );
            }
        };
        self.weight.as_mut().unwrap().accumulate(&grads.weight)?;
        self.bias.as_mut().unwrap().accumulate(&grads.bias)?;
        Ok(grads.input)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Intermediate values of one taped block pass: `values[i]` is the input to
/// layer `i`, the last entry is the block output.
#[derive(Clone, Debug)]
pub struct BlockTape {
    values: Vec<Tensor>,
}

impl BlockTape {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("tape holds at least the input")
    }
}

/// Ordered list of layers applied in sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    layers: Vec<Layer>,
}

impl Block {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a block needs at least one layer"));
        }
        Ok(Self { layers })
    }

    pub fn from_specs(specs: &[LayerSpec], rng: &mut SeededRng) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|&s| Layer::init(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.spec.output_shape(&shape))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_taped(&self, x: &Tensor) -> Result<BlockTape> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for l in &self.layers {
            let next = l.forward(values.last().unwrap())?;
            values.push(next);
        }
        Ok(BlockTape { values })
    }

    pub fn backward(&mut self, tape: &BlockTape, upstream: &Tensor) -> Result<Tensor> {
        if tape.values.len() != self.layers.len() + 1 {
            return Err(Error::invalid("tape does not belong to this block"));
        }
        let mut grad = upstream.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            grad = l.backward(&tape.values[i], &tape.values[i + 1], &grad)?;
        }
        Ok(grad)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(Layer::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::LeakyRelu { alpha: 1.0 }.validate().is_err());
        assert!(LayerSpec::LeakyRelu { alpha: 0.2 }.validate().is_ok());
        let bad = LayerSpec::Conv {
            in_channels: 1,
            out_channels: 1,
            kernel_size: 0,
            stride: 1,
            padding: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let spec = LayerSpec::Conv {
            in_channels: 2,
            out_channels: 3,
            kernel_size: 3,
            stride: 1,
            padding: 1,
        };
        let a = Layer::init(spec, &mut SeededRng::new(1)).unwrap();
        let b = Layer::init(spec, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / (18.0 + 27.0)).sqrt();
        assert!(a
            .weight()
            .unwrap()
            .value
            .data()
            .iter()
            .all(|v| v.abs() <= limit));
        assert!(a.bias().unwrap().value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_shape_propagation() {
        let mut rng = SeededRng::new(0);
        let block = Block::from_specs(
            &[
                LayerSpec::Conv {
                    in_channels: 1,
                    out_channels: 4,
                    kernel_size: 4,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::LeakyRelu { alpha: 0.2 },
                LayerSpec::Dense {
                    in_features: 64,
                    out_features: 1,
                },
            ],
            &mut rng,
        )
        .unwrap();
        assert_eq!(block.output_shape(&[1, 8, 8]).unwrap(), vec![1]);
        assert!(block.output_shape(&[2, 8, 8]).is_err());
        let y = block.forward(&Tensor::zeros(&[3, 1, 8, 8])).unwrap();
        assert_eq!(y.shape(), &[3, 1]);
    }
}
