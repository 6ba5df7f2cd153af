//! Channel merging and the reduced convolution.
//!
//! Input channels of one bucket are averaged, the matching filter channels
//! summed. Singleton buckets are copied and cost nothing; a bucket of size
//! `n >= 2` costs `n - 1` additions plus one division per coordinate on the
//! input side and `n - 1` additions per coordinate on the filter side.

use alloc::vec::Vec;
use core::ops::Range;

use super::bucket::BucketAssignment;
use super::patch::{Patch, PatchGrid};
use crate::error::{Error, Result};
use crate::tensor::FilterBank;

/// Averages the `area`-sized channel planes of `src` per group into `dst`.
pub(crate) fn merge_input_into(
    src: &[f32],
    area: usize,
    groups: &[Vec<usize>],
    dst: &mut Vec<f32>,
) -> u64 {
    dst.clear();
    dst.reserve(groups.len() * area);
    let mut flops = 0u64;
    for group in groups {
        if let [only] = group.as_slice() {
            dst.extend_from_slice(&src[only * area..(only + 1) * area]);
            continue;
        }
        let n = group.len() as f64;
        for k in 0..area {
            let sum: f64 = group.iter().map(|&c| f64::from(src[c * area + k])).sum();
            dst.push((sum / n) as f32);
        }
        flops += (group.len() as u64) * area as u64;
    }
    flops
}

/// Sums filter channels per group into `dst` (`C_out x groups x K x K`).
pub(crate) fn merge_filters_into(
    filters: &FilterBank,
    groups: &[Vec<usize>],
    dst: &mut Vec<f32>,
) -> u64 {
    let kk = filters.kernel() * filters.kernel();
    dst.clear();
    dst.reserve(filters.out_channels() * groups.len() * kk);
    let mut flops = 0u64;
    for j in 0..filters.out_channels() {
        for group in groups {
            if let [only] = group.as_slice() {
                dst.extend_from_slice(filters.kernel_slice(j, *only));
                continue;
            }
            for k in 0..kk {
                let sum: f64 = group
                    .iter()
                    .map(|&c| f64::from(filters.kernel_slice(j, c)[k]))
                    .sum();
                dst.push(sum as f32);
            }
            flops += (group.len() as u64 - 1) * kk as u64;
        }
    }
    flops
}

/// Convolves a `depth x side x side` patch slab with `C_out x depth x K x K`
/// weights at every valid core position of patch `p`, handing each value to
/// `emit(j, a, b, value)` with `(a, b)` the core offset. Returns FLOPs
/// (`2 * K^2 * depth` per output value).
pub(crate) fn reduced_conv_into(
    grid: &PatchGrid,
    p: usize,
    slab: &[f32],
    depth: usize,
    weights: &[f32],
    c_out: usize,
    mut emit: impl FnMut(usize, usize, usize, f32),
) -> u64 {
    let k = grid.kernel();
    let kk = k * k;
    let side = grid.side();
    let area = side * side;
    let pad = grid.padding();
    let (rows, cols) = (grid.valid_rows(p), grid.valid_cols(p));
    let halo = grid.halo();
    let mut flops = 0u64;
    for j in 0..c_out {
        let filter = &weights[j * depth * kk..(j + 1) * depth * kk];
        for a in rows.clone() {
            // Kernel window rows inside the patch start at a - pad_top + halo.
            let wy = a + halo - pad.top;
            for b in cols.clone() {
                let wx = b + halo - pad.left;
                let mut acc = 0.0f64;
                for c in 0..depth {
                    let plane = &slab[c * area..(c + 1) * area];
                    let kernel = &filter[c * kk..(c + 1) * kk];
                    for u in 0..k {
                        let row = &plane[(wy + u) * side + wx..(wy + u) * side + wx + k];
                        for (wv, xv) in kernel[u * k..(u + 1) * k].iter().zip(row) {
                            acc += f64::from(*wv) * f64::from(*xv);
                        }
                    }
                }
                emit(j, a, b, acc as f32);
                flops += 2 * (kk * depth) as u64;
            }
        }
    }
    flops
}

/// Averages the channels of `patch` per bucket.
pub fn merge_input(patch: &Patch, assignment: &BucketAssignment) -> Result<Patch> {
    if assignment.channels() != patch.channels {
        return Err(Error::ChannelMismatch {
            expected: patch.channels,
            found: assignment.channels(),
        });
    }
    let mut data = Vec::new();
    merge_input_into(
        &patch.data,
        patch.side * patch.side,
        assignment.groups(),
        &mut data,
    );
    Ok(Patch {
        index: patch.index,
        origin: patch.origin,
        side: patch.side,
        channels: assignment.reduced_channels(),
        data,
    })
}

/// Sums the filter channels of every bucket. `filters` is left untouched.
pub fn merge_filters(filters: &FilterBank, assignment: &BucketAssignment) -> Result<FilterBank> {
    if assignment.channels() != filters.in_channels() {
        return Err(Error::ChannelMismatch {
            expected: filters.in_channels(),
            found: assignment.channels(),
        });
    }
    let mut data = Vec::new();
    merge_filters_into(filters, assignment.groups(), &mut data);
    FilterBank::new(
        filters.out_channels(),
        assignment.reduced_channels(),
        filters.kernel(),
        data,
    )
}

/// Output of one patch: `C_out x core x core`, zero where skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreBlock {
    pub out_channels: usize,
    pub core: usize,
    /// Computed core rows and columns.
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub data: Vec<f32>,
}

impl CoreBlock {
    pub fn get(&self, j: usize, a: usize, b: usize) -> f32 {
        self.data[(j * self.core + a) * self.core + b]
    }
}

/// Convolves a (reduced) patch with (reduced) filters at the core positions
/// of `patch` that map inside the output.
pub fn reduced_conv(patch: &Patch, filters: &FilterBank, grid: &PatchGrid) -> Result<CoreBlock> {
    if patch.channels != filters.in_channels() {
        return Err(Error::ChannelMismatch {
            expected: filters.in_channels(),
            found: patch.channels,
        });
    }
    if patch.side != grid.side() || filters.kernel() != grid.kernel() {
        return Err(Error::Shape("patch does not belong to this grid".into()));
    }
    let core = grid.core();
    let c_out = filters.out_channels();
    let mut data = alloc::vec![0.0f32; c_out * core * core];
    reduced_conv_into(
        grid,
        patch.index,
        &patch.data,
        patch.channels,
        filters.data(),
        c_out,
        |j, a, b, v| data[(j * core + a) * core + b] = v,
    );
    let (rows, cols) = (grid.valid_rows(patch.index), grid.valid_cols(patch.index));
    Ok(CoreBlock {
        out_channels: c_out,
        core,
        rows,
        cols,
        data,
    })
}
