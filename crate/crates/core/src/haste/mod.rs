//! The compressed convolution operator.
//!
//! For every patch: flatten and center the channels, hash them, group equal
//! codes, average the grouped input channels, sum the matching filter
//! channels, and convolve the reduced patch with the reduced filters at the
//! patch's core positions. Patches are processed in raster order and each
//! writes a disjoint set of output pixels.

mod bucket;
mod merge;
mod patch;

use alloc::format;
use alloc::vec::Vec;

pub use bucket::{assign_buckets, assign_random, BucketAssignment};
pub use merge::{merge_filters, merge_input, reduced_conv, CoreBlock};
pub use patch::{flatten_center, rasterize, Centering, ChannelVectors, Patch, PatchGrid, MAX_HALO};

use crate::error::{Error, Result};
use crate::flops::{FlopsLedger, LayerParams, PatchCensus};
use crate::lsh::{HashConfig, HyperplaneSet};
use crate::rng::derive_seed;
use crate::tensor::{FeatureMap, FilterBank};

/// How channels are grouped within a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    #[default]
    Lsh,
    /// Random groups with the bucket sizes the LSH pass would have produced.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HasteConfig {
    pub hash: HashConfig,
    /// Halo `g` around each `K x K` core; the patch side is `K + 2g`.
    pub halo: usize,
    pub selection: SelectionMode,
    /// Seed of the random grouping ablation.
    pub random_seed: u64,
    pub centering: Centering,
}

impl HasteConfig {
    /// Configuration for a `kernel x kernel` layer with `planes` hyperplanes
    /// of sparsity `sparsity`, drawn from `seed`.
    pub fn new(
        kernel: usize,
        halo: usize,
        planes: usize,
        sparsity: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            hash: HashConfig::new(planes, sparsity, Self::hash_dim(kernel, halo), seed)?,
            halo,
            selection: SelectionMode::Lsh,
            random_seed: seed,
            centering: Centering::ChannelMean,
        };
        cfg.validate(kernel)?;
        Ok(cfg)
    }

    pub fn with_selection(mut self, selection: SelectionMode) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_centering(mut self, centering: Centering) -> Self {
        self.centering = centering;
        self
    }

    /// Hash dimension `(K + 2g)^2`, or 9 for `1 x 1` kernels.
    pub fn hash_dim(kernel: usize, halo: usize) -> usize {
        if kernel == 1 {
            patch::POINTWISE_CORE * patch::POINTWISE_CORE
        } else {
            (kernel + 2 * halo) * (kernel + 2 * halo)
        }
    }

    pub fn validate(&self, kernel: usize) -> Result<()> {
        self.hash.validate()?;
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        if kernel > 1 && (self.halo == 0 || self.halo > MAX_HALO || self.halo < kernel / 2) {
            return Err(Error::Config(format!(
                "halo {} unsupported for kernel {kernel} (need {}..={MAX_HALO})",
                self.halo,
                (kernel / 2).max(1)
            )));
        }
        let dim = Self::hash_dim(kernel, self.halo);
        if self.hash.dim != dim {
            return Err(Error::Config(format!(
                "hash dimension {} does not match patch area {dim}",
                self.hash.dim
            )));
        }
        Ok(())
    }
}

/// Bucket census of one processed patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchStats {
    pub index: usize,
    pub channels: usize,
    pub reduced_channels: usize,
    pub merged_buckets: usize,
}

impl PatchStats {
    /// `r_p = 1 - C~_in / C_in`.
    pub fn ratio(&self) -> f64 {
        1.0 - self.reduced_channels as f64 / self.channels as f64
    }
}

#[derive(Debug, Clone)]
pub struct HasteOutput {
    pub output: FeatureMap,
    /// One entry per processed patch, in raster order. Patches whose core
    /// maps entirely outside the output are skipped.
    pub patches: Vec<PatchStats>,
    pub ledger: FlopsLedger,
}

impl HasteOutput {
    pub fn mean_r(&self) -> f64 {
        self.ledger.mean_r()
    }

    pub fn mean_m(&self) -> f64 {
        self.ledger.mean_m()
    }
}

/// Same-size, stride-1 convolution of `map` with `filters`, compressed per
/// patch. Bias is not applied.
pub fn haste_forward(
    map: &FeatureMap,
    filters: &FilterBank,
    cfg: &HasteConfig,
    planes: &HyperplaneSet,
) -> Result<HasteOutput> {
    let kernel = filters.kernel();
    if map.channels() != filters.in_channels() {
        return Err(Error::ChannelMismatch {
            expected: filters.in_channels(),
            found: map.channels(),
        });
    }
    cfg.validate(kernel)?;
    let grid = PatchGrid::new(kernel, cfg.halo, map.height(), map.width())?;
    if planes.dim() != grid.hash_dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.hash_dim(),
            found: planes.dim(),
        });
    }

    let (c_in, h, w) = map.shape();
    let c_out = filters.out_channels();
    let params = LayerParams {
        c_in,
        c_out,
        height: h,
        width: w,
        kernel,
        halo: if kernel == 1 { 1 } else { cfg.halo },
        planes: planes.planes(),
        sparsity: planes.config().sparsity,
        plane_nonzeros: planes.nonzeros(),
        charge_hashing: cfg.selection == SelectionMode::Lsh,
    };
    let mut ledger = FlopsLedger::new(params);
    ledger.begin_image();

    let mut output = FeatureMap::zeros(c_out, h, w)?;
    let mut stats = Vec::with_capacity(grid.patch_count());
    let area = grid.hash_dim();
    let (mut slab, mut centered, mut reduced, mut weights) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    for p in 0..grid.patch_count() {
        let pixels = grid.output_pixels(p);
        if pixels == 0 {
            continue;
        }
        grid.extract_into(map, p, &mut slab);
        let centering_flops = patch::center_into(&slab, c_in, area, cfg.centering, &mut centered);
        let mut hashing_flops = 0;
        let codes = centered
            .chunks(area)
            .map(|v| {
                let (code, adds) = planes.code_counted(v);
                hashing_flops += adds;
                code
            })
            .collect();
        let mut assignment = BucketAssignment::from_codes(codes);
        if cfg.selection == SelectionMode::Lsh {
            ledger.measured.centering += centering_flops;
            ledger.measured.hashing += hashing_flops;
        } else {
            assignment = assign_random(
                &assignment.group_sizes(),
                c_in,
                derive_seed(cfg.random_seed, p as u64),
            )?;
        }

        let depth = assignment.reduced_channels();
        let (slab_ref, weights_ref) = if assignment.is_identity() {
            (slab.as_slice(), filters.data())
        } else {
            ledger.measured.merge_fms +=
                merge::merge_input_into(&slab, area, assignment.groups(), &mut reduced);
            ledger.measured.merge_filters +=
                merge::merge_filters_into(filters, assignment.groups(), &mut weights);
            (reduced.as_slice(), weights.as_slice())
        };
        ledger.measured.reduced_conv += merge::reduced_conv_into(
            &grid,
            p,
            slab_ref,
            depth,
            weights_ref,
            c_out,
            |j, a, b, v| {
                let (y, x) = grid.output_coord(p, a, b);
                output.set(j, y, x, v);
            },
        );

        ledger.record_patch(&PatchCensus {
            merged_channels: assignment.merged_channels(),
            merged_buckets: assignment.merged_buckets(),
            output_pixels: pixels,
        });
        stats.push(PatchStats {
            index: p,
            channels: c_in,
            reduced_channels: depth,
            merged_buckets: assignment.merged_buckets(),
        });
    }

    Ok(HasteOutput {
        output,
        patches: stats,
        ledger,
    })
}

/// [`haste_forward`] for `1 x 1` kernels: non-overlapping `3 x 3` patches,
/// 9-dimensional hashing, no convolution padding.
pub fn haste_forward_1x1(
    map: &FeatureMap,
    filters: &FilterBank,
    cfg: &HasteConfig,
    planes: &HyperplaneSet,
) -> Result<HasteOutput> {
    if filters.kernel() != 1 {
        return Err(Error::Config(format!(
            "pointwise path needs a 1x1 kernel, got {}",
            filters.kernel()
        )));
    }
    haste_forward(map, filters, cfg, planes)
}
