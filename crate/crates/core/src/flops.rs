//! Cost model for the compressed convolution.
//!
//! A FLOP is one addition or one multiplication (a MAC counts 2). Index
//! arithmetic, comparisons and bit packing are free. With patch side
//! `P = K + 2g`, the per-layer components are
//!
//! | component      | averaged form                                  |
//! |----------------|------------------------------------------------|
//! | centering      | `2 * patches * C_in * P^2`                     |
//! | hashing        | `patches * C_in * L * P^2 * (1 - s)`           |
//! | merge_fms      | `patches * P^2 * (C_in * r + m)`               |
//! | merge_filters  | `patches * C_out * C_in * r * K^2`             |
//! | reduced_conv   | `2 * H * W * K^2 * C_in * (1 - r) * C_out`     |
//!
//! The exact mode evaluates the same expressions per patch with that patch's
//! own census (`C_in * r_p` merged-away channels, `m_p` merged buckets, the
//! actual non-zero plane entries and the number of output pixels the patch
//! really computes) and sums them. Exact-mode values equal the instrumented
//! counts in [`FlopsLedger::measured`].

use alloc::format;

use crate::error::{Error, Result};

/// FLOP tallies for the five parts of a compressed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopComponents {
    pub centering: u64,
    pub hashing: u64,
    pub merge_fms: u64,
    pub merge_filters: u64,
    pub reduced_conv: u64,
}

impl FlopComponents {
    pub fn total(&self) -> u64 {
        self.centering + self.hashing + self.merge_fms + self.merge_filters + self.reduced_conv
    }

    pub fn add(&mut self, other: &FlopComponents) {
        self.centering += other.centering;
        self.hashing += other.hashing;
        self.merge_fms += other.merge_fms;
        self.merge_filters += other.merge_filters;
        self.reduced_conv += other.reduced_conv;
    }
}

#[inline]
fn side_sq(kernel: usize, halo: usize) -> u64 {
    let side = (kernel + 2 * halo) as u64;
    side * side
}

pub fn flops_centering(patches: u64, c_in: usize, kernel: usize, halo: usize) -> u64 {
    2 * patches * c_in as u64 * side_sq(kernel, halo)
}

/// Averaged hashing cost, rounded to the nearest integer.
pub fn flops_hashing(
    patches: u64,
    c_in: usize,
    planes: usize,
    kernel: usize,
    halo: usize,
    sparsity: f64,
) -> u64 {
    let v = patches as f64
        * c_in as f64
        * planes as f64
        * side_sq(kernel, halo) as f64
        * (1.0 - sparsity);
    round(v)
}

pub fn flops_merge_fms(
    patches: u64,
    c_in: usize,
    kernel: usize,
    halo: usize,
    r: f64,
    m: f64,
) -> u64 {
    round(patches as f64 * side_sq(kernel, halo) as f64 * (c_in as f64 * r + m))
}

pub fn flops_merge_filters(patches: u64, c_out: usize, c_in: usize, r: f64, kernel: usize) -> u64 {
    round(patches as f64 * c_out as f64 * c_in as f64 * r * (kernel * kernel) as f64)
}

pub fn flops_reduced_conv(
    height: usize,
    width: usize,
    kernel: usize,
    c_in: usize,
    r: f64,
    c_out: usize,
) -> u64 {
    round(2.0 * (height * width * kernel * kernel) as f64 * c_in as f64 * (1.0 - r) * c_out as f64)
}

/// Total of the components and the fractional reduction against `baseline`.
///
/// A zero baseline yields a reduction of 0.
pub fn ledger_total(components: &FlopComponents, baseline: u64) -> (u64, f64) {
    let total = components.total();
    let reduction = if baseline == 0 {
        0.0
    } else {
        1.0 - total as f64 / baseline as f64
    };
    (total, reduction)
}

#[inline]
fn round(v: f64) -> u64 {
    // f64::round is not available without std.
    (v + 0.5) as u64
}

/// Static description of a compressed convolution layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub halo: usize,
    pub planes: usize,
    pub sparsity: f64,
    /// Non-zero entries over all hyperplanes actually in use.
    pub plane_nonzeros: u64,
    /// `false` when channel groups are not chosen by hashing (random ablation),
    /// in which case centering and hashing are not charged.
    pub charge_hashing: bool,
}

impl LayerParams {
    pub fn patch_area(&self) -> u64 {
        side_sq(self.kernel, self.halo)
    }

    pub fn regular_flops(&self) -> u64 {
        crate::tensor::mac_count_regular(
            self.c_in,
            self.c_out,
            self.height,
            self.width,
            self.kernel,
        )
    }
}

/// Bucket census of one processed patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchCensus {
    /// `C_in - C~_in`, i.e. `C_in * r_p`.
    pub merged_channels: usize,
    /// Buckets holding two or more channels (`m_p`).
    pub merged_buckets: usize,
    /// Output pixels this patch computes.
    pub output_pixels: usize,
}

/// Exact-mode FLOPs of a single patch.
pub fn patch_flops(params: &LayerParams, census: &PatchCensus) -> FlopComponents {
    let area = params.patch_area();
    let c_in = params.c_in as u64;
    let c_out = params.c_out as u64;
    let kk = (params.kernel * params.kernel) as u64;
    let reduced = c_in - census.merged_channels as u64;
    let (centering, hashing) = if params.charge_hashing {
        (2 * c_in * area, c_in * params.plane_nonzeros)
    } else {
        (0, 0)
    };
    FlopComponents {
        centering,
        hashing,
        merge_fms: area * (census.merged_channels + census.merged_buckets) as u64,
        merge_filters: c_out * census.merged_channels as u64 * kk,
        reduced_conv: 2 * census.output_pixels as u64 * kk * reduced * c_out,
    }
}

/// Per-layer FLOPs account, accumulated over patches and over images.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsLedger {
    pub params: LayerParams,
    /// Exact-mode analytic components.
    pub analytic: FlopComponents,
    /// Components counted by the kernels while they ran.
    pub measured: FlopComponents,
    /// Regular-convolution FLOPs for the same work.
    pub regular_baseline: u64,
    pub patch_count: u64,
    /// Number of forward passes (images) folded into this ledger.
    pub images: u64,
    /// Sum over patches of `C_in * r_p`.
    pub merged_channels: u64,
    /// Sum over patches of `m_p`.
    pub merged_buckets: u64,
    /// Sum over patches of `n_p * C_in * r_p`, `n_p` the patch's output pixels.
    pub merged_pixel_channels: u64,
    /// Sum over patches of `n_p`.
    pub output_pixels: u64,
}

impl FlopsLedger {
    pub fn new(params: LayerParams) -> Self {
        Self {
            params,
            analytic: FlopComponents::default(),
            measured: FlopComponents::default(),
            regular_baseline: 0,
            patch_count: 0,
            images: 0,
            merged_channels: 0,
            merged_buckets: 0,
            merged_pixel_channels: 0,
            output_pixels: 0,
        }
    }

    pub(crate) fn begin_image(&mut self) {
        self.images += 1;
        self.regular_baseline += self.params.regular_flops();
    }

    pub(crate) fn record_patch(&mut self, census: &PatchCensus) {
        self.analytic.add(&patch_flops(&self.params, census));
        self.patch_count += 1;
        self.merged_channels += census.merged_channels as u64;
        self.merged_buckets += census.merged_buckets as u64;
        self.merged_pixel_channels += (census.output_pixels * census.merged_channels) as u64;
        self.output_pixels += census.output_pixels as u64;
    }

    /// Mean compression ratio over all processed patches.
    pub fn mean_r(&self) -> f64 {
        if self.patch_count == 0 {
            return 0.0;
        }
        self.merged_channels as f64 / (self.patch_count * self.params.c_in as u64) as f64
    }

    /// Compression ratio averaged over output pixels rather than patches.
    /// Border patches compute fewer pixels, so this is the `r` under which
    /// the map-level reduced convolution cost is exact.
    pub fn pixel_mean_r(&self) -> f64 {
        if self.output_pixels == 0 {
            return 0.0;
        }
        self.merged_pixel_channels as f64 / (self.output_pixels * self.params.c_in as u64) as f64
    }

    /// Mean number of merged buckets per patch.
    pub fn mean_m(&self) -> f64 {
        if self.patch_count == 0 {
            return 0.0;
        }
        self.merged_buckets as f64 / self.patch_count as f64
    }

    /// Components evaluated from the patch count and the means `r`, `m`;
    /// the reduced convolution takes the pixel-weighted `r`.
    pub fn averaged(&self) -> FlopComponents {
        let p = &self.params;
        let (r, m) = (self.mean_r(), self.mean_m());
        let (centering, hashing) = if p.charge_hashing {
            (
                flops_centering(self.patch_count, p.c_in, p.kernel, p.halo),
                flops_hashing(
                    self.patch_count,
                    p.c_in,
                    p.planes,
                    p.kernel,
                    p.halo,
                    p.sparsity,
                ),
            )
        } else {
            (0, 0)
        };
        FlopComponents {
            centering,
            hashing,
            merge_fms: flops_merge_fms(self.patch_count, p.c_in, p.kernel, p.halo, r, m),
            merge_filters: flops_merge_filters(self.patch_count, p.c_out, p.c_in, r, p.kernel),
            reduced_conv: self.images
                * flops_reduced_conv(
                    p.height,
                    p.width,
                    p.kernel,
                    p.c_in,
                    self.pixel_mean_r(),
                    p.c_out,
                ),
        }
    }

    /// Exact-mode total.
    pub fn total(&self) -> u64 {
        self.analytic.total()
    }

    /// Fractional reduction of the exact-mode total against the baseline.
    pub fn reduction(&self) -> f64 {
        ledger_total(&self.analytic, self.regular_baseline).1
    }

    /// Folds another ledger for the same layer into this one.
    pub fn merge(&mut self, other: &FlopsLedger) -> Result<()> {
        if self.params != other.params {
            return Err(Error::Config(format!(
                "cannot merge ledgers of different layers: {:?} vs {:?}",
                self.params, other.params
            )));
        }
        self.analytic.add(&other.analytic);
        self.measured.add(&other.measured);
        self.regular_baseline += other.regular_baseline;
        self.patch_count += other.patch_count;
        self.images += other.images;
        self.merged_channels += other.merged_channels;
        self.merged_buckets += other.merged_buckets;
        self.merged_pixel_channels += other.merged_pixel_channels;
        self.output_pixels += other.output_pixels;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LayerParams {
        LayerParams {
            c_in: 8,
            c_out: 4,
            height: 6,
            width: 6,
            kernel: 3,
            halo: 1,
            planes: 8,
            sparsity: 0.5,
            plane_nonzeros: 100,
            charge_hashing: true,
        }
    }

    #[test]
    fn spot_values() {
        assert_eq!(flops_centering(9, 2, 3, 1), 900);
        assert_eq!(flops_centering(0, 2, 3, 1), 0);
        assert_eq!(flops_hashing(9, 2, 16, 3, 1, 0.5), 3600);
    }

    #[test]
    fn hashing_decreases_with_sparsity() {
        let mut prev = u64::MAX;
        for s in [0.05, 0.2, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.9, 0.99] {
            let v = flops_hashing(9, 8, 16, 3, 1, s);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn no_compression_limit() {
        assert_eq!(flops_merge_fms(9, 8, 3, 1, 0.0, 0.0), 0);
        assert_eq!(flops_merge_filters(9, 4, 8, 0.0, 3), 0);
        assert_eq!(
            flops_reduced_conv(6, 6, 3, 8, 0.0, 4),
            crate::tensor::mac_count_regular(8, 4, 6, 6, 3)
        );
    }

    #[test]
    fn sanity_patch_merge_cost() {
        // Groups sized (2, 1, 3, 1, 1) over 8 channels: C_in * r = 3, m = 2.
        let census = PatchCensus {
            merged_channels: 3,
            merged_buckets: 2,
            output_pixels: 9,
        };
        let f = patch_flops(&params(), &census);
        assert_eq!(f.merge_fms, 125);
        assert_eq!(f.merge_filters, 4 * 3 * 9);
        assert_eq!(f.reduced_conv, 2 * 9 * 9 * 5 * 4);
        assert_eq!(f.centering, 2 * 8 * 25);
        assert_eq!(f.hashing, 800);
    }

    #[test]
    fn totals_and_reduction() {
        let zero = FlopComponents::default();
        assert_eq!(ledger_total(&zero, 1000), (0, 1.0));
        let c = FlopComponents {
            centering: 100,
            hashing: 200,
            merge_fms: 300,
            merge_filters: 150,
            reduced_conv: 250,
        };
        assert_eq!(ledger_total(&c, 1000), (1000, 0.0));
        assert_eq!(ledger_total(&c, 0).1, 0.0);
    }

    #[test]
    fn reduction_grows_with_r() {
        let p = params();
        let total = |r: f64| {
            let c = FlopComponents {
                centering: flops_centering(9, p.c_in, 3, 1),
                hashing: flops_hashing(9, p.c_in, p.planes, 3, 1, p.sparsity),
                merge_fms: flops_merge_fms(9, p.c_in, 3, 1, r, 1.0),
                merge_filters: flops_merge_filters(9, p.c_out, p.c_in, r, 3),
                reduced_conv: flops_reduced_conv(6, 6, 3, p.c_in, r, p.c_out),
            };
            ledger_total(&c, p.regular_flops()).1
        };
        let mut r = 0.0;
        while r < 0.9 {
            assert!(total(r + 0.05) > total(r));
            r += 0.05;
        }
    }

    #[test]
    fn merge_requires_same_layer() {
        let mut a = FlopsLedger::new(params());
        let mut other = params();
        other.c_out = 5;
        assert!(a.merge(&FlopsLedger::new(other)).is_err());
        let mut b = FlopsLedger::new(params());
        b.begin_image();
        b.record_patch(&PatchCensus {
            merged_channels: 2,
            merged_buckets: 1,
            output_pixels: 9,
        });
        a.merge(&b).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.patch_count, 2);
        assert_eq!(a.images, 2);
        assert_eq!(a.mean_r(), 0.25);
        assert_eq!(a.mean_m(), 1.0);
    }
}
