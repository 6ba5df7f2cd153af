//! Materialized model graph and its forward pass.

use std::collections::BTreeMap;

use haste_core::flops::FlopsLedger;
use haste_core::{
    conv2d_direct, haste_forward, mac_count_regular, FeatureMap, FilterBank, HasteConfig,
    HyperplaneSet, PaddingSpec,
};
use serde_json::Value;

use crate::container::{Container, ContainerKind};
use crate::error::{Result, RuntimeError};
use crate::layers::{infer_shapes, LayerSpec, Shape};

#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// Position in the layer list.
    pub index: usize,
    /// Position among the convolutions (0-based).
    pub ordinal: usize,
    pub filters: FilterBank,
    pub bias: Option<Vec<f32>>,
    pub haste_eligible: bool,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvLayer),
    /// `y = a * x + b` per channel.
    BatchNorm {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    Linear {
        weight: Vec<f32>,
        bias: Option<Vec<f32>>,
        in_features: usize,
        out_features: usize,
    },
    ResidualBegin,
    ResidualAdd,
}

/// Regular cost of a layer that carries weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub index: usize,
    pub kind: &'static str,
    pub conv_ordinal: Option<usize>,
    /// FLOPs per image.
    pub flops: u64,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub input_shape: Shape,
    pub specs: Vec<LayerSpec>,
    pub shapes: Vec<Shape>,
    pub meta: BTreeMap<String, Value>,
    layers: Vec<Layer>,
}

/// Compressed execution settings of one convolution.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    pub cfg: HasteConfig,
    pub planes: HyperplaneSet,
}

/// Which convolutions run compressed, indexed by conv ordinal.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    pub convs: Vec<Option<ConvPlan>>,
}

impl Plan {
    pub fn baseline(model: &Model) -> Self {
        Self {
            convs: vec![None; model.conv_count()],
        }
    }

    pub fn get(&self, ordinal: usize) -> Option<&ConvPlan> {
        self.convs.get(ordinal).and_then(Option::as_ref)
    }

    pub fn swapped(&self) -> usize {
        self.convs.iter().flatten().count()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f32>,
    /// Ledger of every compressed convolution, by conv ordinal.
    pub ledgers: Vec<Option<FlopsLedger>>,
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

enum Act {
    Map(FeatureMap),
    Flat(Vec<f32>),
}

fn map_values(map: FeatureMap, f: impl Fn(usize, f32) -> f32) -> Result<FeatureMap> {
    let (c, h, w) = map.shape();
    let plane = h * w;
    let data = map
        .into_data()
        .into_iter()
        .enumerate()
        .map(|(k, v)| f(k / plane, v))
        .collect();
    Ok(FeatureMap::new(c, h, w, data)?)
}

fn max_pool2(map: &FeatureMap) -> Result<FeatureMap> {
    let (c, h, w) = map.shape();
    Ok(FeatureMap::from_fn(c, h / 2, w / 2, |k, y, x| {
        let (y, x) = (2 * y, 2 * x);
        map.get(k, y, x)
            .max(map.get(k, y, x + 1))
            .max(map.get(k, y + 1, x))
            .max(map.get(k, y + 1, x + 1))
    })?)
}

impl Model {
    pub fn from_container(container: &Container) -> Result<Self> {
        let manifest = &container.manifest;
        if manifest.kind != ContainerKind::Model {
            return Err(RuntimeError::Format(
                "container does not hold a model".into(),
            ));
        }
        let dims = manifest
            .input_shape
            .as_ref()
            .ok_or_else(|| RuntimeError::Format("model manifest lacks input_shape".into()))?;
        let input_shape = Shape::from_dims(dims)?;
        let shapes = infer_shapes(input_shape, &manifest.layers)?;

        let mut layers = Vec::with_capacity(manifest.layers.len());
        let mut ordinal = 0;
        for (index, spec) in manifest.layers.iter().enumerate() {
            let input = if index == 0 {
                input_shape
            } else {
                shapes[index - 1]
            };
            let tensor = |name: &str, want: &[usize]| -> Result<Vec<f32>> {
                let (shape, data) = container
                    .f32_tensor(name)
                    .map_err(|e| RuntimeError::at_layer(index, e.to_string()))?;
                if shape != want {
                    return Err(RuntimeError::at_layer(
                        index,
                        format!("tensor {name:?} has shape {shape:?}, expected {want:?}"),
                    ));
                }
                Ok(data)
            };
            let layer = match spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    weight,
                    bias,
                    haste_eligible,
                    ..
                } => {
                    let w = tensor(weight, &[*out_channels, *in_channels, *kernel, *kernel])?;
                    let bias = bias
                        .as_deref()
                        .map(|b| tensor(b, &[*out_channels]))
                        .transpose()?;
                    let Shape::Spatial { h, w: width, .. } = input else {
                        unreachable!("shape inference admits convs on maps only")
                    };
                    let layer = ConvLayer {
                        index,
                        ordinal,
                        filters: FilterBank::new(*out_channels, *in_channels, *kernel, w)?,
                        bias,
                        haste_eligible: *haste_eligible,
                        height: h,
                        width,
                    };
                    ordinal += 1;
                    Layer::Conv(layer)
                }
                LayerSpec::Batchnorm {
                    channels,
                    eps,
                    scale,
                    shift,
                    mean,
                    var,
                } => {
                    let [scale, shift, mean, var] =
                        [scale, shift, mean, var].map(|n| tensor(n, &[*channels]));
                    let (scale, shift, mean, var) = (scale?, shift?, mean?, var?);
                    if *eps < 0.0 || var.iter().any(|v| f64::from(*v) + eps <= 0.0) {
                        return Err(RuntimeError::at_layer(
                            index,
                            "variance plus eps must be positive",
                        ));
                    }
                    let a: Vec<f64> = scale
                        .iter()
                        .zip(&var)
                        .map(|(s, v)| f64::from(*s) / (f64::from(*v) + eps).sqrt())
                        .collect();
                    let b = shift
                        .iter()
                        .zip(&mean)
                        .zip(&a)
                        .map(|((t, m), a)| f64::from(*t) - a * f64::from(*m))
                        .collect();
                    Layer::BatchNorm { a, b }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Maxpool2 => Layer::MaxPool2,
                LayerSpec::GlobalAvgpool => Layer::GlobalAvgPool,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Linear {
                    in_features,
                    out_features,
                    weight,
                    bias,
                } => Layer::Linear {
                    weight: tensor(weight, &[*out_features, *in_features])?,
                    bias: bias
                        .as_deref()
                        .map(|b| tensor(b, &[*out_features]))
                        .transpose()?,
                    in_features: *in_features,
                    out_features: *out_features,
                },
                LayerSpec::ResidualBegin => Layer::ResidualBegin,
                LayerSpec::ResidualAdd => Layer::ResidualAdd,
            };
            layers.push(layer);
        }
        Ok(Self {
            input_shape,
            specs: manifest.layers.clone(),
            shapes,
            meta: manifest.meta.clone(),
            layers,
        })
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.convs().count()
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes.last().copied().unwrap_or(self.input_shape)
    }

    /// Regular FLOPs and parameter counts of the conv and linear layers.
    pub fn costs(&self) -> Vec<LayerCost> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(index, layer)| match layer {
                Layer::Conv(c) => Some(LayerCost {
                    index,
                    kind: "conv",
                    conv_ordinal: Some(c.ordinal),
                    flops: mac_count_regular(
                        c.filters.in_channels(),
                        c.filters.out_channels(),
                        c.height,
                        c.width,
                        c.filters.kernel(),
                    ),
                    params: c.filters.data().len() + c.bias.as_ref().map_or(0, Vec::len),
                }),
                Layer::Linear {
                    in_features,
                    out_features,
                    bias,
                    ..
                } => Some(LayerCost {
                    index,
                    kind: "linear",
                    conv_ordinal: None,
                    flops: 2 * (*in_features as u64) * (*out_features as u64),
                    params: in_features * out_features + bias.as_ref().map_or(0, Vec::len),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        let bn: usize = self
            .specs
            .iter()
            .map(|s| match s {
                LayerSpec::Batchnorm { channels, .. } => 4 * channels,
                _ => 0,
            })
            .sum();
        self.costs().iter().map(|c| c.params).sum::<usize>() + bn
    }

    /// Runs one image. `observe` sees every convolution as
    /// `(ordinal, input, output)`, the output with bias added.
    pub fn forward_observed(
        &self,
        input: FeatureMap,
        plan: &Plan,
        observe: &mut dyn FnMut(usize, &FeatureMap, &FeatureMap),
    ) -> Result<ForwardOutput> {
        let (c, h, w) = input.shape();
        if self.input_shape != (Shape::Spatial { c, h, w }) {
            return Err(RuntimeError::validation(format!(
                "input is {c}x{h}x{w}, model expects {}",
                self.input_shape
            )));
        }
        let mut ledgers = vec![None; self.conv_count()];
        let mut act = Act::Map(input);
        let mut saved: Vec<Act> = Vec::new();
        for layer in &self.layers {
            act = match (layer, act) {
                (Layer::Conv(conv), Act::Map(x)) => {
                    let mut y = match plan.get(conv.ordinal) {
                        Some(p) if conv.haste_eligible => {
                            let out = haste_forward(&x, &conv.filters, &p.cfg, &p.planes)?;
                            ledgers[conv.ordinal] = Some(out.ledger);
                            out.output
                        }
                        _ => conv2d_direct(
                            &x,
                            &conv.filters,
                            PaddingSpec::same(conv.filters.kernel()),
                        )?,
                    };
                    if let Some(b) = &conv.bias {
                        y.add_channel_bias(b)?;
                    }
                    observe(conv.ordinal, &x, &y);
                    Act::Map(y)
                }
                (Layer::BatchNorm { a, b }, Act::Map(x)) => {
                    Act::Map(map_values(x, |k, v| (a[k] * f64::from(v) + b[k]) as f32)?)
                }
                (Layer::Relu, Act::Map(x)) => Act::Map(map_values(x, |_, v| v.max(0.0))?),
                (Layer::Relu, Act::Flat(v)) => {
                    Act::Flat(v.into_iter().map(|v| v.max(0.0)).collect())
                }
                (Layer::MaxPool2, Act::Map(x)) => Act::Map(max_pool2(&x)?),
                (Layer::GlobalAvgPool, Act::Map(x)) => {
                    let plane = (x.height() * x.width()) as f64;
                    Act::Flat(
                        (0..x.channels())
                            .map(|k| {
                                (x.channel(k).iter().map(|v| f64::from(*v)).sum::<f64>() / plane)
                                    as f32
                            })
                            .collect(),
                    )
                }
                (Layer::Flatten, Act::Map(x)) => Act::Flat(x.into_data()),
                (Layer::Flatten, flat @ Act::Flat(_)) => flat,
                (
                    Layer::Linear {
                        weight,
                        bias,
                        in_features,
                        out_features,
                    },
                    Act::Flat(x),
                ) => Act::Flat(
                    (0..*out_features)
                        .map(|o| {
                            let row = &weight[o * in_features..(o + 1) * in_features];
                            let dot: f64 = row
                                .iter()
                                .zip(&x)
                                .map(|(w, v)| f64::from(*w) * f64::from(*v))
                                .sum();
                            (dot + bias.as_ref().map_or(0.0, |b| f64::from(b[o]))) as f32
                        })
                        .collect(),
                ),
                (Layer::ResidualBegin, a) => {
                    saved.push(match &a {
                        Act::Map(m) => Act::Map(m.clone()),
                        Act::Flat(v) => Act::Flat(v.clone()),
                    });
                    a
                }
                (Layer::ResidualAdd, a) => match (saved.pop(), a) {
                    (Some(Act::Map(s)), Act::Map(x)) => {
                        let (c, h, w) = x.shape();
                        let sum = x.data().iter().zip(s.data()).map(|(a, b)| a + b).collect();
                        Act::Map(FeatureMap::new(c, h, w, sum)?)
                    }
                    (Some(Act::Flat(s)), Act::Flat(x)) => {
                        Act::Flat(x.iter().zip(&s).map(|(a, b)| a + b).collect())
                    }
                    _ => unreachable!("residual pairing is checked at load"),
                },
                _ => unreachable!("layer/activation pairing is checked at load"),
            };
        }
        let logits = match act {
            Act::Flat(v) => v,
            Act::Map(m) => m.into_data(),
        };
        Ok(ForwardOutput { logits, ledgers })
    }

    pub fn forward(&self, input: FeatureMap, plan: &Plan) -> Result<ForwardOutput> {
        self.forward_observed(input, plan, &mut |_, _, _| {})
    }
}

/// Parses and validates a model container.
pub fn load_model(bytes: &[u8]) -> Result<Model> {
    Model::from_container(&Container::from_bytes(bytes)?)
}
