#![allow(dead_code)]

use haste_core::rng::CounterRng;
use haste_runtime::model::{argmax, Plan};
use haste_runtime::{Container, ContainerBuilder, ContainerKind, Dataset, LayerSpec, Model};

pub fn normal(rng: &mut CounterRng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| scale * rng.next_normal() as f32).collect()
}

pub fn conv(i: usize, o: usize, k: usize, name: &str) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        pad: k / 2,
        stride: 1,
        weight: format!("{name}.weight"),
        bias: Some(format!("{name}.bias")),
        haste_eligible: true,
    }
}

pub fn linear(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Linear {
        in_features: i,
        out_features: o,
        weight: "fc.weight".into(),
        bias: Some("fc.bias".into()),
    }
}

/// `4x8x8 -> conv3(6) relu conv3(6) relu maxpool2 conv1(8) relu gap linear(3)`.
pub fn three_conv_model(seed: u64) -> Container {
    let mut rng = CounterRng::new(seed);
    ContainerBuilder::new(ContainerKind::Model)
        .input_shape(vec![4, 8, 8])
        .layer(conv(4, 6, 3, "c1"))
        .layer(LayerSpec::Relu)
        .layer(conv(6, 6, 3, "c2"))
        .layer(LayerSpec::Relu)
        .layer(LayerSpec::Maxpool2)
        .layer(conv(6, 8, 1, "c3"))
        .layer(LayerSpec::Relu)
        .layer(LayerSpec::GlobalAvgpool)
        .layer(linear(8, 3))
        .f32_tensor("c1.weight", &[6, 4, 3, 3], &normal(&mut rng, 216, 0.3))
        .f32_tensor("c1.bias", &[6], &normal(&mut rng, 6, 0.1))
        .f32_tensor("c2.weight", &[6, 6, 3, 3], &normal(&mut rng, 324, 0.3))
        .f32_tensor("c2.bias", &[6], &normal(&mut rng, 6, 0.1))
        .f32_tensor("c3.weight", &[8, 6, 1, 1], &normal(&mut rng, 48, 0.5))
        .f32_tensor("c3.bias", &[8], &normal(&mut rng, 8, 0.1))
        .f32_tensor("fc.weight", &[3, 8], &normal(&mut rng, 24, 1.0))
        .f32_tensor("fc.bias", &[3], &normal(&mut rng, 3, 0.1))
        .finish()
}

/// `4x8x8 -> conv3(5) relu gap linear(3)`.
pub fn one_conv_model(seed: u64) -> Container {
    let mut rng = CounterRng::new(seed);
    ContainerBuilder::new(ContainerKind::Model)
        .input_shape(vec![4, 8, 8])
        .layer(conv(4, 5, 3, "c1"))
        .layer(LayerSpec::Relu)
        .layer(LayerSpec::GlobalAvgpool)
        .layer(linear(5, 3))
        .f32_tensor("c1.weight", &[5, 4, 3, 3], &normal(&mut rng, 180, 0.3))
        .f32_tensor("c1.bias", &[5], &normal(&mut rng, 5, 0.1))
        .f32_tensor("fc.weight", &[3, 5], &normal(&mut rng, 15, 1.0))
        .f32_tensor("fc.bias", &[3], &normal(&mut rng, 3, 0.1))
        .finish()
}

/// Random `4x8x8` images; with `duplicated`, channel 1 copies channel 0 and
/// channel 3 copies channel 2.
pub fn images(seed: u64, n: usize, duplicated: bool) -> Vec<f32> {
    let mut rng = CounterRng::new(seed);
    let mut out = Vec::with_capacity(n * 256);
    for _ in 0..n {
        let a = normal(&mut rng, 64, 1.0);
        let b = normal(&mut rng, 64, 1.0);
        let c = normal(&mut rng, 64, 1.0);
        let d = normal(&mut rng, 64, 1.0);
        if duplicated {
            out.extend(a.iter().chain(&a).chain(&c).chain(&c));
        } else {
            out.extend(a.iter().chain(&b).chain(&c).chain(&d));
        }
    }
    out
}

/// Labels each image with the regular network's prediction, so the
/// baseline is 100% accurate.
pub fn self_labeled(model: &Model, images: Vec<f32>) -> Dataset {
    let n = images.len() / 256;
    let unlabeled = Dataset::new((4, 8, 8), images, vec![0; n]).unwrap();
    let plan = Plan::baseline(model);
    let labels = (0..n)
        .map(|i| argmax(&model.forward(unlabeled.image(i), &plan).unwrap().logits) as i64)
        .collect();
    Dataset::new((4, 8, 8), unlabeled_images(&unlabeled), labels).unwrap()
}

fn unlabeled_images(d: &Dataset) -> Vec<f32> {
    (0..d.len())
        .flat_map(|i| d.image_data(i).to_vec())
        .collect()
}

/// Labels cycling through three classes.
pub fn cyclic(images: Vec<f32>) -> Dataset {
    let n = images.len() / 256;
    Dataset::new((4, 8, 8), images, (0..n as i64).map(|i| i % 3).collect()).unwrap()
}
