//! Layer descriptions as stored in a model manifest.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RuntimeError};

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// One entry of the sequential layer list, tagged by `kind`.
///
/// Tensor fields name entries of the container's tensor table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        #[serde(default = "one")]
        stride: usize,
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
        /// Whether the layer may be replaced by the compressed operator.
        #[serde(default = "yes")]
        haste_eligible: bool,
    },
    Batchnorm {
        channels: usize,
        eps: f64,
        scale: String,
        shift: String,
        mean: String,
        var: String,
    },
    Relu,
    Maxpool2,
    GlobalAvgpool,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
    },
    /// Saves the current activation for a later `residual_add`.
    ResidualBegin,
    /// Adds the most recently saved activation.
    ResidualAdd,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool2 => "maxpool2",
            LayerSpec::GlobalAvgpool => "global_avgpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::ResidualBegin => "residual_begin",
            LayerSpec::ResidualAdd => "residual_add",
        }
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape::Spatial { c, h, w }),
            [n] if n > 0 => Ok(Shape::Flat(n)),
            _ => Err(RuntimeError::validation(format!(
                "unsupported input shape {dims:?}"
            ))),
        }
    }

    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Spatial { c, h, w } => write!(f, "{c}x{h}x{w}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Propagates `input` through `layers`, returning the shape after every
/// layer. Fails with the index of the first layer that does not fit.
pub fn infer_shapes(input: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>> {
    let mut shape = input;
    let mut saved = Vec::new();
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let bad = |msg: String| RuntimeError::at_layer(i, msg);
        shape = match (layer, shape) {
            (
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    pad,
                    stride,
                    ..
                },
                Shape::Spatial { c, h, w },
            ) => {
                if *stride != 1 {
                    return Err(bad(format!("stride {stride} is not supported")));
                }
                if *kernel == 0 || kernel % 2 == 0 {
                    return Err(bad(format!("kernel {kernel} must be odd")));
                }
                if *pad != kernel / 2 {
                    return Err(bad(format!(
                        "padding {pad} does not preserve the size for kernel {kernel}"
                    )));
                }
                if *in_channels != c || *out_channels == 0 {
                    return Err(bad(format!(
                        "conv expects {in_channels} input channels, got {c}"
                    )));
                }
                Shape::Spatial {
                    c: *out_channels,
                    h,
                    w,
                }
            }
            (LayerSpec::Batchnorm { channels, .. }, Shape::Spatial { c, .. }) => {
                if *channels != c {
                    return Err(bad(format!("batchnorm over {channels} channels, got {c}")));
                }
                shape
            }
            (LayerSpec::Relu, s) => s,
            (LayerSpec::Maxpool2, Shape::Spatial { c, h, w }) => {
                if h < 2 || w < 2 {
                    return Err(bad(format!("cannot pool a {h}x{w} map")));
                }
                Shape::Spatial {
                    c,
                    h: h / 2,
                    w: w / 2,
                }
            }
            (LayerSpec::GlobalAvgpool, Shape::Spatial { c, .. }) => Shape::Flat(c),
            (LayerSpec::Flatten, s) => Shape::Flat(s.numel()),
            (
                LayerSpec::Linear {
                    in_features,
                    out_features,
                    ..
                },
                Shape::Flat(n),
            ) => {
                if *in_features != n || *out_features == 0 {
                    return Err(bad(format!(
                        "linear expects {in_features} features, got {n}"
                    )));
                }
                Shape::Flat(*out_features)
            }
            (LayerSpec::ResidualBegin, s) => {
                saved.push(s);
                s
            }
            (LayerSpec::ResidualAdd, s) => match saved.pop() {
                Some(prev) if prev == s => s,
                Some(prev) => {
                    return Err(bad(format!("residual shapes differ: {prev} vs {s}")));
                }
                None => return Err(bad("residual_add without residual_begin".into())),
            },
            (layer, s) => {
                return Err(bad(format!(
                    "{} cannot take input of shape {s}",
                    layer.kind()
                )));
            }
        };
        shapes.push(shape);
    }
    if !saved.is_empty() {
        return Err(RuntimeError::at_layer(
            layers.len().saturating_sub(1),
            "unclosed residual_begin",
        ));
    }
    Ok(shapes)
}
