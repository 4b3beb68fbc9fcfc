use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CnnError, LayerWeights, Tensor, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Convolution {
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

/// One layer of a sequential network: the linear (or pooling) part plus the
/// activation applied after it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl LayerSpec {
    pub fn conv(kernel_size: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Convolution {
                kernel_size,
                in_channels,
                out_channels,
                stride: 1,
                padding: 0,
            },
            activation: Activation::None,
            label: None,
        }
    }

    pub fn max_pool(window: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool { window, stride },
            activation: Activation::None,
            label: None,
        }
    }

    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected {
                in_features,
                out_features,
            },
            activation: Activation::None,
            label: None,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn name(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => self.kind.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |what: &str| Err(CnnError::InvalidLayer(format!("{}: {what}", self.name())));
        match self.kind {
            LayerKind::Convolution {
                kernel_size,
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                if kernel_size == 0 || stride == 0 {
                    return bad("kernel_size and stride must be >= 1");
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be >= 1");
                }
            }
            LayerKind::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("window and stride must be >= 1");
                }
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad("feature counts must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Parameter counts `(kernel_or_matrix, bias)` this layer expects.
    pub fn parameter_counts(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Convolution {
                kernel_size,
                in_channels,
                out_channels,
                ..
            } => (
                out_channels * in_channels * kernel_size * kernel_size,
                out_channels,
            ),
            LayerKind::MaxPool { .. } => (0, 0),
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => (in_features * out_features, out_features),
        }
    }

    /// Fan-in of one output unit; zero for pooling.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Convolution {
                kernel_size,
                in_channels,
                ..
            } => kernel_size * kernel_size * in_channels,
            LayerKind::MaxPool { .. } => 0,
            LayerKind::FullyConnected { in_features, .. } => in_features,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Convolution {
                kernel_size,
                in_channels,
                out_channels,
                stride,
                padding,
            } => write!(
                f,
                "conv {kernel_size}x{kernel_size} {in_channels}->{out_channels} s{stride} p{padding}"
            ),
            LayerKind::MaxPool { window, stride } => write!(f, "maxpool {window}x{window} s{stride}"),
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => write!(f, "fc {in_features}->{out_features}"),
        }
    }
}

fn sliding_extent(input: usize, padding: usize, window: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

fn mismatch(layer: &LayerSpec, expected: String, actual: &TensorShape) -> CnnError {
    CnnError::ShapeMismatch {
        layer: layer.name(),
        expected,
        actual: actual.clone(),
    }
}

/// Shape produced by `layer` on an input of shape `input`.
pub fn output_shape(layer: &LayerSpec, input: &TensorShape) -> Result<TensorShape, CnnError> {
    layer.validate()?;
    match layer.kind {
        LayerKind::Convolution {
            kernel_size,
            in_channels,
            out_channels,
            stride,
            padding,
        } => {
            let expected =
                || format!("({in_channels},H,W) with H,W + 2*{padding} >= {kernel_size}");
            let (c, h, w) = input
                .as_chw()
                .ok_or_else(|| mismatch(layer, expected(), input))?;
            if c != in_channels {
                return Err(mismatch(layer, expected(), input));
            }
            let oh = sliding_extent(h, padding, kernel_size, stride)
                .ok_or_else(|| mismatch(layer, expected(), input))?;
            let ow = sliding_extent(w, padding, kernel_size, stride)
                .ok_or_else(|| mismatch(layer, expected(), input))?;
            TensorShape::chw(out_channels, oh, ow)
        }
        LayerKind::MaxPool { window, stride } => {
            let expected = || format!("(C,H,W) with H,W >= {window}");
            let (c, h, w) = input
                .as_chw()
                .ok_or_else(|| mismatch(layer, expected(), input))?;
            let oh = sliding_extent(h, 0, window, stride)
                .ok_or_else(|| mismatch(layer, expected(), input))?;
            let ow = sliding_extent(w, 0, window, stride)
                .ok_or_else(|| mismatch(layer, expected(), input))?;
            TensorShape::chw(c, oh, ow)
        }
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => {
            if input.element_count() != in_features as u64 {
                return Err(mismatch(
                    layer,
                    format!("{in_features} elements (any shape, flattened)"),
                    input,
                ));
            }
            TensorShape::flat(out_features)
        }
    }
}

/// Multiply-accumulate count of `layer` on `input`. Pooling counts one
/// operation per comparison, `window²` per output element.
pub fn mac_count(layer: &LayerSpec, input: &TensorShape) -> Result<u64, CnnError> {
    let out = output_shape(layer, input)?;
    Ok(match layer.kind {
        LayerKind::Convolution {
            kernel_size,
            in_channels,
            ..
        } => out.element_count() * (kernel_size * kernel_size * in_channels) as u64,
        LayerKind::MaxPool { window, .. } => out.element_count() * (window * window) as u64,
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => in_features as u64 * out_features as u64,
    })
}

fn check_block(layer: &LayerSpec, block: &LayerWeights) -> Result<(), CnnError> {
    let (k, b) = layer.parameter_counts();
    if block.kernel.len() != k || block.bias.len() != b {
        return Err(CnnError::WeightShape {
            layer: layer.name(),
            expected: (k, b),
            actual: (block.kernel.len(), block.bias.len()),
        });
    }
    if !block.is_finite() {
        return Err(CnnError::NonFiniteWeight {
            layer: layer.name(),
        });
    }
    Ok(())
}

fn activate(activation: Activation, values: &mut [f32]) {
    if activation == Activation::Relu {
        for v in values {
            *v = v.max(0.0);
        }
    }
}

/// Direct evaluation of one layer.
///
/// Convolution kernels are laid out `[out][in][ky][kx]` and fully connected
/// matrices `[out][in]`. Each output starts from its bias and accumulates in
/// f32 over input channel, then kernel row, then kernel column, so the result
/// is reproducible bit for bit.
pub fn forward(
    layer: &LayerSpec,
    block: &LayerWeights,
    input: &Tensor,
) -> Result<Tensor, CnnError> {
    let out_shape = output_shape(layer, input.shape())?;
    check_block(layer, block)?;
    let x = input.values();
    let mut out = Vec::with_capacity(out_shape.element_count() as usize);

    match layer.kind {
        LayerKind::Convolution {
            kernel_size: k,
            in_channels,
            out_channels,
            stride,
            padding,
        } => {
            let (_, h, w) = input.shape().as_chw().expect("checked by output_shape");
            let (_, oh, ow) = out_shape.as_chw().expect("conv output is chw");
            let (h, w, pad) = (h as isize, w as isize, padding as isize);
            for oc in 0..out_channels {
                let kernel_oc =
                    &block.kernel[oc * in_channels * k * k..(oc + 1) * in_channels * k * k];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let y0 = (oy * stride) as isize - pad;
                        let x0 = (ox * stride) as isize - pad;
                        let mut acc = block.bias[oc];
                        for ic in 0..in_channels {
                            let plane = &x[ic * (h * w) as usize..(ic + 1) * (h * w) as usize];
                            let kern = &kernel_oc[ic * k * k..(ic + 1) * k * k];
                            for ky in 0..k {
                                let iy = y0 + ky as isize;
                                if iy < 0 || iy >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = x0 + kx as isize;
                                    if ix < 0 || ix >= w {
                                        continue;
                                    }
                                    acc += kern[ky * k + kx] * plane[(iy * w + ix) as usize];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        LayerKind::MaxPool { window, stride } => {
            let (c, h, w) = input.shape().as_chw().expect("checked by output_shape");
            let (_, oh, ow) = out_shape.as_chw().expect("pool output is chw");
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        for dy in 0..window {
                            let row = (oy * stride + dy) * w;
                            for dx in 0..window {
                                best = best.max(plane[row + ox * stride + dx]);
                            }
                        }
                        out.push(best);
                    }
                }
            }
        }
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => {
            for o in 0..out_features {
                let row = &block.kernel[o * in_features..(o + 1) * in_features];
                let mut acc = block.bias[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc += wi * xi;
                }
                out.push(acc);
            }
        }
    }

    activate(layer.activation, &mut out);
    Tensor::new(out_shape, out)
}
