//! Patch rasterization and channel centering.
//!
//! The input is zero-padded for the convolution, then (conceptually) on the
//! bottom and right until the padded size is a multiple of the core side.
//! Cores of side `K` tile that padded map; each patch extends its core by a
//! zero-filled halo of `g` pixels on every side, so neighbouring patches
//! overlap by `2g` pixels. A core pixel is the centre of one kernel
//! position, and only positions whose output falls inside the original
//! `H x W` are computed.
//!
//! `1 x 1` kernels use non-overlapping `3 x 3` patches (core 3, no halo) on
//! the unpadded input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, PaddingSpec};

/// Largest supported halo.
pub const MAX_HALO: usize = 3;

/// Side of the non-overlapping patches used for `1 x 1` kernels.
pub const POINTWISE_CORE: usize = 3;

/// Tiling of one feature map into patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    kernel: usize,
    core: usize,
    halo: usize,
    pad: PaddingSpec,
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
}

impl PatchGrid {
    /// Grid for a same-size convolution with kernel `kernel` and halo `halo`.
    ///
    /// `1 x 1` kernels ignore `halo`.
    pub fn new(kernel: usize, halo: usize, height: usize, width: usize) -> Result<Self> {
        let pad = if kernel == 1 {
            PaddingSpec::ZERO
        } else {
            PaddingSpec::same(kernel)
        };
        Self::with_padding(kernel, halo, height, width, pad)
    }

    /// Grid over a map padded with `pad`. Output coordinates are only
    /// meaningful when `pad` keeps the spatial size.
    pub fn with_padding(
        kernel: usize,
        halo: usize,
        height: usize,
        width: usize,
        pad: PaddingSpec,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Shape("empty feature map".into()));
        }
        let (core, halo) = if kernel == 1 {
            (POINTWISE_CORE, 0)
        } else {
            if halo == 0 || halo > MAX_HALO {
                return Err(Error::Config(format!(
                    "halo must lie in 1..={MAX_HALO}, got {halo}"
                )));
            }
            if pad.top.max(pad.bottom).max(pad.left).max(pad.right) > halo {
                return Err(Error::Config(format!(
                    "halo {halo} is too small for kernel {kernel}"
                )));
            }
            (kernel, halo)
        };
        let rows = (height + pad.vertical()).div_ceil(core);
        let cols = (width + pad.horizontal()).div_ceil(core);
        Ok(Self {
            kernel,
            core,
            halo,
            pad,
            height,
            width,
            rows,
            cols,
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn core(&self) -> usize {
        self.core
    }

    pub fn halo(&self) -> usize {
        self.halo
    }

    pub fn padding(&self) -> PaddingSpec {
        self.pad
    }

    /// Patch side `core + 2 * halo`.
    pub fn side(&self) -> usize {
        self.core + 2 * self.halo
    }

    /// Length of a flattened channel of one patch.
    pub fn hash_dim(&self) -> usize {
        self.side() * self.side()
    }

    /// `(rows, cols)` of the patch grid.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Core origin of patch `p` in padded coordinates.
    pub fn core_origin(&self, p: usize) -> (usize, usize) {
        ((p / self.cols) * self.core, (p % self.cols) * self.core)
    }

    fn valid_range(origin: usize, lead: usize, core: usize, extent: usize) -> Range<usize> {
        // Core offset a maps to output coordinate origin + a - lead.
        let start = lead.saturating_sub(origin).min(core);
        let end = (extent + lead).saturating_sub(origin).min(core);
        start..end.max(start)
    }

    /// Core row offsets of patch `p` whose outputs lie inside the map.
    pub fn valid_rows(&self, p: usize) -> Range<usize> {
        Self::valid_range(self.core_origin(p).0, self.pad.top, self.core, self.height)
    }

    /// Core column offsets of patch `p` whose outputs lie inside the map.
    pub fn valid_cols(&self, p: usize) -> Range<usize> {
        Self::valid_range(self.core_origin(p).1, self.pad.left, self.core, self.width)
    }

    /// Number of output pixels patch `p` produces.
    pub fn output_pixels(&self, p: usize) -> usize {
        self.valid_rows(p).len() * self.valid_cols(p).len()
    }

    /// Output pixel of core offset `(a, b)` in patch `p`.
    pub fn output_coord(&self, p: usize, a: usize, b: usize) -> (usize, usize) {
        let (y0, x0) = self.core_origin(p);
        (y0 + a - self.pad.top, x0 + b - self.pad.left)
    }

    /// Copies the `C x side x side` slab of patch `p` into `dst`.
    pub(crate) fn extract_into(&self, map: &FeatureMap, p: usize, dst: &mut Vec<f32>) {
        let (c, h, w) = map.shape();
        let side = self.side();
        let (y0, x0) = self.core_origin(p);
        // Original coordinate = padded - pad; the patch starts `halo` before the core.
        let top = y0 as isize - self.halo as isize - self.pad.top as isize;
        let left = x0 as isize - self.halo as isize - self.pad.left as isize;
        dst.clear();
        dst.resize(c * side * side, 0.0);
        let x_lo = left.max(0) as usize;
        let x_hi = (left + side as isize).clamp(0, w as isize) as usize;
        if x_lo >= x_hi {
            return;
        }
        let dst_x = (x_lo as isize - left) as usize;
        for ch in 0..c {
            let plane = map.channel(ch);
            for py in 0..side {
                let y = top + py as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                let src = &plane[y as usize * w + x_lo..y as usize * w + x_hi];
                let start = (ch * side + py) * side + dst_x;
                dst[start..start + src.len()].copy_from_slice(src);
            }
        }
    }

    pub fn extract(&self, map: &FeatureMap, p: usize) -> Patch {
        let mut data = Vec::new();
        self.extract_into(map, p, &mut data);
        Patch {
            index: p,
            origin: self.core_origin(p),
            side: self.side(),
            channels: map.channels(),
            data,
        }
    }
}

/// One patch: `C x side x side` values around a core.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub index: usize,
    /// Core origin in padded coordinates.
    pub origin: (usize, usize),
    pub side: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn channel(&self, i: usize) -> &[f32] {
        let area = self.side * self.side;
        &self.data[i * area..(i + 1) * area]
    }
}

/// Splits `map` into patches for a kernel of size `kernel`.
///
/// `conv_pad` is the convolution padding applied before tiling.
pub fn rasterize(
    map: &FeatureMap,
    kernel: usize,
    halo: usize,
    conv_pad: PaddingSpec,
) -> Result<(PatchGrid, Vec<Patch>)> {
    let grid = PatchGrid::with_padding(kernel, halo, map.height(), map.width(), conv_pad)?;
    let patches = (0..grid.patch_count())
        .map(|p| grid.extract(map, p))
        .collect();
    Ok((grid, patches))
}

/// How channel vectors are centered before hashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Subtract the coordinate-wise mean over channels (a `side^2` vector).
    #[default]
    ChannelMean,
    /// Subtract each channel's own scalar mean.
    PerChannelScalar,
}

/// `C` flattened vectors of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVectors {
    dim: usize,
    data: Vec<f32>,
}

impl ChannelVectors {
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Shape("channel vectors must be non-empty".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(Self {
            dim,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.dim)
    }
}

/// Centers the `channels x dim` slab `src` into `dst`; returns FLOPs spent
/// (`2 * channels * dim` for either mode).
pub(crate) fn center_into(
    src: &[f32],
    channels: usize,
    dim: usize,
    mode: Centering,
    dst: &mut Vec<f32>,
) -> u64 {
    dst.clear();
    dst.resize(channels * dim, 0.0);
    match mode {
        Centering::ChannelMean => {
            let mut mean = vec![0.0f64; dim];
            for row in src.chunks(dim) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += f64::from(*v);
                }
            }
            let inv = channels as f64;
            mean.iter_mut().for_each(|m| *m /= inv);
            for (out, row) in dst.chunks_mut(dim).zip(src.chunks(dim)) {
                for ((o, v), m) in out.iter_mut().zip(row).zip(&mean) {
                    *o = (f64::from(*v) - m) as f32;
                }
            }
        }
        Centering::PerChannelScalar => {
            for (out, row) in dst.chunks_mut(dim).zip(src.chunks(dim)) {
                let m = row.iter().map(|v| f64::from(*v)).sum::<f64>() / dim as f64;
                for (o, v) in out.iter_mut().zip(row) {
                    *o = (f64::from(*v) - m) as f32;
                }
            }
        }
    }
    2 * (channels * dim) as u64
}

/// Flattens every channel of `patch` row-major and centers it.
pub fn flatten_center(patch: &Patch, mode: Centering) -> ChannelVectors {
    let dim = patch.side * patch.side;
    let mut data = Vec::new();
    center_into(&patch.data, patch.channels, dim, mode, &mut data);
    ChannelVectors { dim, data }
}
