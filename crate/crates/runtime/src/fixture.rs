//! Deterministic reference network and labeled test set.
//!
//! Images are 3 x 32 x 32 oriented gratings: ten classes from five
//! orientations times two spatial periods, with random phase, contrast and
//! pixel noise. Red and green hold the same noisy grating, blue an
//! inverted, attenuated copy on an offset with its own noise.
//!
//! The network is `conv(3->8) bn relu maxpool2 conv(8->16) relu maxpool2
//! conv(16->32) relu global_avgpool linear(32->10)`. Its weights are
//! constructed, not trained: the first convolution holds four line
//! detectors, deeper convolutions random mixtures of the distinct features
//! below them, and every convolution emits its features twice, the second
//! copy with slightly jittered weights. Both copies of a feature feed the
//! next layer through identical weights. Only the linear head is fitted, by
//! ridge regression on pooled features of a separate training draw.

use haste_core::rng::{derive_seed, CounterRng};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::container::{Container, ContainerBuilder, ContainerKind};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::layers::LayerSpec;
use crate::model::{argmax, Model, Plan};

pub const CLASSES: usize = 10;
pub const SIDE: usize = 32;
pub const SAMPLE_LOGITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    /// Pixel noise standard deviation.
    pub noise: f32,
    /// Relative weight jitter between the two copies of a feature.
    pub jitter: f32,
    /// Ridge penalty per training sample.
    pub ridge: f64,
}

impl FixtureConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            train: 2000,
            test: 1000,
            noise: 0.15,
            jitter: 0.05,
            ridge: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub model: Container,
    pub test: Container,
    pub baseline_accuracy: f64,
}

/// Draws `count` labeled images; labels cycle through the classes.
pub fn gratings(seed: u64, count: usize, noise: f32) -> Dataset {
    let plane = SIDE * SIDE;
    let mut images = Vec::with_capacity(count * 3 * plane);
    let mut labels = Vec::with_capacity(count);
    for n in 0..count {
        let mut rng = CounterRng::new(derive_seed(seed, n as u64));
        let class = n % CLASSES;
        let theta = (class % 5) as f64 * std::f64::consts::PI / 5.0;
        let period = if class < 5 { 8.0 } else { 4.0 };
        let phase = rng.next_f64() * std::f64::consts::TAU;
        let contrast = 0.7 + 0.6 * rng.next_f64();
        let (s, c) = theta.sin_cos();
        let g: Vec<f32> = (0..plane)
            .map(|k| {
                let (y, x) = ((k / SIDE) as f64, (k % SIDE) as f64);
                let t = (x * c + y * s) * std::f64::consts::TAU / period + phase;
                (contrast * t.cos()) as f32
            })
            .collect();
        let red: Vec<f32> = g
            .iter()
            .map(|v| v + noise * rng.next_normal() as f32)
            .collect();
        images.extend_from_slice(&red);
        images.extend_from_slice(&red);
        images.extend(
            g.iter()
                .map(|v| 0.3 - 0.5 * v + noise * rng.next_normal() as f32),
        );
        labels.push(class as i64);
    }
    Dataset::new((3, SIDE, SIDE), images, labels).expect("consistent shapes")
}

/// Horizontal, vertical and the two diagonal line detectors.
fn line_detectors() -> [[f32; 9]; 4] {
    let h = [-1., -1., -1., 2., 2., 2., -1., -1., -1.];
    let v = [-1., 2., -1., -1., 2., -1., -1., 2., -1.];
    let d = [2., -1., -1., -1., 2., -1., -1., -1., 2.];
    let a = [-1., -1., 2., -1., 2., -1., 2., -1., -1.];
    [h, v, d, a].map(|k| k.map(|x| x / 6.0))
}

/// Weights `out x in x 3 x 3` where output `2f` and `2f + 1` are copies of
/// feature `f` (the second jittered) and inputs `2k`, `2k + 1` share the
/// weights of input feature `k`. `feature(f, k)` gives the 3 x 3 kernel
/// from distinct input feature `k` to distinct output feature `f`.
fn paired_bank(
    rng: &mut CounterRng,
    features: usize,
    inputs: usize,
    paired_inputs: bool,
    jitter: f32,
    mut feature: impl FnMut(&mut CounterRng, usize, usize) -> [f32; 9],
) -> Vec<f32> {
    let in_channels = if paired_inputs { 2 * inputs } else { inputs };
    let mut out = Vec::with_capacity(2 * features * in_channels * 9);
    for f in 0..features {
        let kernels: Vec<[f32; 9]> = (0..inputs).map(|k| feature(rng, f, k)).collect();
        let twin: Vec<[f32; 9]> = kernels
            .iter()
            .map(|k| k.map(|w| w * (1.0 + jitter * rng.next_normal() as f32)))
            .collect();
        for copy in [&kernels, &twin] {
            for i in 0..in_channels {
                let k = if paired_inputs { i / 2 } else { i };
                out.extend_from_slice(&copy[k]);
            }
        }
    }
    out
}

fn random_kernel(rng: &mut CounterRng, scale: f32) -> [f32; 9] {
    std::array::from_fn(|_| scale * rng.next_normal() as f32)
}

fn conv_spec(i: usize, o: usize, name: &str) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: 3,
        pad: 1,
        stride: 1,
        weight: format!("{name}.weight"),
        bias: Some(format!("{name}.bias")),
        haste_eligible: true,
    }
}

fn assemble(
    cfg: &FixtureConfig,
    tensors: &[(&str, Vec<usize>, Vec<f32>)],
    meta: Vec<(&str, Value)>,
) -> Container {
    let mut b = ContainerBuilder::new(ContainerKind::Model)
        .input_shape(vec![3, SIDE, SIDE])
        .layer(conv_spec(3, 8, "conv1"))
        .layer(LayerSpec::Batchnorm {
            channels: 8,
            eps: 1e-5,
            scale: "bn1.scale".into(),
            shift: "bn1.shift".into(),
            mean: "bn1.mean".into(),
            var: "bn1.var".into(),
        })
        .layer(LayerSpec::Relu)
        .layer(LayerSpec::Maxpool2)
        .layer(conv_spec(8, 16, "conv2"))
        .layer(LayerSpec::Relu)
        .layer(LayerSpec::Maxpool2)
        .layer(conv_spec(16, 32, "conv3"))
        .layer(LayerSpec::Relu)
        .layer(LayerSpec::GlobalAvgpool)
        .layer(LayerSpec::Linear {
            in_features: 32,
            out_features: CLASSES,
            weight: "fc.weight".into(),
            bias: Some("fc.bias".into()),
        })
        .meta("seed", json!(cfg.seed));
    for (name, shape, data) in tensors {
        b = b.f32_tensor(name, shape, data);
    }
    for (k, v) in meta {
        b = b.meta(k, v);
    }
    b.finish()
}

fn pooled_features(model: &Model, data: &Dataset) -> Result<Vec<Vec<f32>>> {
    let plan = Plan::baseline(model);
    (0..data.len())
        .into_par_iter()
        .map(|i| Ok(model.forward(data.image(i), &plan)?.logits))
        .collect()
}

/// Ridge regression onto one-hot targets; returns `(weight, bias)`.
fn fit_head(features: &[Vec<f32>], labels: &[i64], ridge: f64) -> (Vec<f32>, Vec<f32>) {
    let n = features.len();
    let d = features[0].len() + 1;
    let x = DMatrix::from_fn(n, d, |r, c| {
        if c + 1 == d {
            1.0
        } else {
            f64::from(features[r][c])
        }
    });
    let y = DMatrix::from_fn(
        n,
        CLASSES,
        |r, c| if labels[r] as usize == c { 1.0 } else { 0.0 },
    );
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * (ridge * n as f64);
    let rhs = x.transpose() * y;
    let solution = gram
        .cholesky()
        .expect("ridge system is positive definite")
        .solve(&rhs);
    let mut weight = Vec::with_capacity(CLASSES * (d - 1));
    for c in 0..CLASSES {
        weight.extend((0..d - 1).map(|r| solution[(r, c)] as f32));
    }
    let bias = (0..CLASSES).map(|c| solution[(d - 1, c)] as f32).collect();
    (weight, bias)
}

/// Builds the network and the labeled test set for `cfg`.
pub fn build(cfg: &FixtureConfig) -> Result<Fixture> {
    let mut rng = CounterRng::new(derive_seed(cfg.seed, 0x5745_4947));
    let lines = line_detectors();
    let conv1 = paired_bank(&mut rng, 4, 3, false, cfg.jitter, |_, f, k| match k {
        2 => lines[f].map(|w| -0.5 * w),
        _ => lines[f],
    });
    let conv1_bias = vec![-0.05f32; 8];
    let conv2 = paired_bank(&mut rng, 8, 4, true, cfg.jitter, |rng, _, _| {
        random_kernel(rng, 1.0 / 6.0)
    });
    let conv2_bias: Vec<f32> = (0..8)
        .map(|_| -0.02 * rng.next_f64() as f32)
        .flat_map(|b| [b, b])
        .collect();
    let conv3 = paired_bank(&mut rng, 16, 8, true, cfg.jitter, |rng, _, _| {
        random_kernel(rng, 1.0 / 8.5)
    });
    let conv3_bias: Vec<f32> = (0..16)
        .map(|_| -0.02 * rng.next_f64() as f32)
        .flat_map(|b| [b, b])
        .collect();
    let bn_scale: Vec<f32> = (0..4).flat_map(|k| [1.0 + 0.1 * k as f32; 2]).collect();
    let bn_shift = vec![0.0f32; 8];
    let bn_mean = vec![0.0f32; 8];
    let bn_var = vec![1.0f32; 8];

    let mut tensors = vec![
        ("conv1.weight", vec![8, 3, 3, 3], conv1),
        ("conv1.bias", vec![8], conv1_bias),
        ("bn1.scale", vec![8], bn_scale),
        ("bn1.shift", vec![8], bn_shift),
        ("bn1.mean", vec![8], bn_mean),
        ("bn1.var", vec![8], bn_var),
        ("conv2.weight", vec![16, 8, 3, 3], conv2),
        ("conv2.bias", vec![16], conv2_bias),
        ("conv3.weight", vec![32, 16, 3, 3], conv3),
        ("conv3.bias", vec![32], conv3_bias),
    ];

    // Fit the head on pooled features of an independent draw.
    let identity: Vec<f32> = (0..32 * 32)
        .map(|k| if k / 32 == k % 32 { 1.0 } else { 0.0 })
        .collect();
    let mut probe = tensors.clone();
    probe.push(("fc.weight", vec![32, 32], identity));
    let probe = assemble(cfg, &probe, Vec::new());
    let probe = Model::from_container(&probe_as_features(probe))?;
    let train = gratings(derive_seed(cfg.seed, 1), cfg.train, cfg.noise);
    let features = pooled_features(&probe, &train)?;
    let (fc_w, fc_b) = fit_head(&features, train.labels(), cfg.ridge);
    tensors.push(("fc.weight", vec![CLASSES, 32], fc_w));
    tensors.push(("fc.bias", vec![CLASSES], fc_b));

    let mut test = gratings(derive_seed(cfg.seed, 2), cfg.test, cfg.noise);
    let draft = assemble(cfg, &tensors, Vec::new());
    let model = Model::from_container(&draft)?;
    let plan = Plan::baseline(&model);
    let logits: Vec<Vec<f32>> = (0..test.len())
        .into_par_iter()
        .map(|i| Ok(model.forward(test.image(i), &plan)?.logits))
        .collect::<Result<_>>()?;
    let correct = logits
        .iter()
        .zip(test.labels())
        .filter(|(l, y)| argmax(l) as i64 == **y)
        .count();
    let accuracy = 100.0 * correct as f64 / test.len() as f64;
    let samples = SAMPLE_LOGITS.min(test.len());

    let meta = vec![
        ("baseline_accuracy", json!(accuracy)),
        ("baseline_correct", json!(correct)),
        ("test_images", json!(test.len())),
        ("sample_indices", json!((0..samples).collect::<Vec<_>>())),
        ("sample_logits", json!(logits[..samples])),
        (
            "thresholds",
            json!({
                "L16_min_flops_reduction_pct": 10.0,
                "L16_max_accuracy_drop_pp": 3.0,
                "L40_accuracy_equals_baseline": true,
            }),
        ),
        (
            "source",
            json!("haste make-fixture: constructed convolutions, ridge-fitted linear head"),
        ),
    ];
    test.meta.insert("seed".into(), json!(cfg.seed));
    test.meta.insert("classes".into(), json!(CLASSES));
    Ok(Fixture {
        model: assemble(cfg, &tensors, meta),
        test: test.to_container(),
        baseline_accuracy: accuracy,
    })
}

/// Rewrites the probe so the head is a 32 x 32 identity, exposing the pooled
/// features as logits.
fn probe_as_features(mut probe: Container) -> Container {
    for layer in &mut probe.manifest.layers {
        if let LayerSpec::Linear {
            out_features, bias, ..
        } = layer
        {
            *out_features = 32;
            *bias = None;
        }
    }
    probe
}
