//! Labeled image sets stored as `images` (f32, N x C x H x W) and `labels`
//! (i64, N) in a dataset container.

use std::collections::BTreeMap;

use haste_core::FeatureMap;
use serde_json::Value;

use crate::container::{Container, ContainerBuilder, ContainerKind};
use crate::error::{Result, RuntimeError};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    images: Vec<f32>,
    labels: Vec<i64>,
    pub meta: BTreeMap<String, Value>,
}

impl Dataset {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        images: Vec<f32>,
        labels: Vec<i64>,
    ) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || images.len() != per * labels.len() {
            return Err(RuntimeError::validation(format!(
                "{} image values do not form {} images of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            images,
            labels,
            meta: BTreeMap::new(),
        })
    }

    pub fn from_container(container: &Container) -> Result<Self> {
        if container.manifest.kind != ContainerKind::Dataset {
            return Err(RuntimeError::Format(
                "container does not hold a dataset".into(),
            ));
        }
        let (shape, images) = container.f32_tensor("images")?;
        let (lshape, labels) = container.i64_tensor("labels")?;
        let [n, c, h, w] = shape[..] else {
            return Err(RuntimeError::validation(format!(
                "images must be N x C x H x W, got {shape:?}"
            )));
        };
        if lshape != [n] {
            return Err(RuntimeError::validation(format!(
                "labels shape {lshape:?} does not match {n} images"
            )));
        }
        let mut data = Self::new((c, h, w), images, labels)?;
        data.meta = container.manifest.meta.clone();
        Ok(data)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn to_container(&self) -> Container {
        let mut b = ContainerBuilder::new(ContainerKind::Dataset)
            .f32_tensor(
                "images",
                &[self.len(), self.channels, self.height, self.width],
                &self.images,
            )
            .i64_tensor("labels", &[self.len()], &self.labels);
        for (k, v) in &self.meta {
            b = b.meta(k, v.clone());
        }
        b.finish()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn image_data(&self, i: usize) -> &[f32] {
        let per = self.channels * self.height * self.width;
        &self.images[i * per..(i + 1) * per]
    }

    pub fn image(&self, i: usize) -> FeatureMap {
        FeatureMap::new(
            self.channels,
            self.height,
            self.width,
            self.image_data(i).to_vec(),
        )
        .expect("shape checked on construction")
    }

    /// The images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(RuntimeError::validation(format!(
                "sample {bad} out of range for {} images",
                self.len()
            )));
        }
        let images = indices
            .iter()
            .flat_map(|&i| self.image_data(i).iter().copied())
            .collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Self::new((self.channels, self.height, self.width), images, labels)?;
        out.meta = self.meta.clone();
        Ok(out)
    }
}
