//! Training-free channel compression for convolutions.
//!
//! Every patch of an input feature map is inspected for redundant channels
//! with sparse random-projection LSH. Channels that land in the same hash
//! bucket are averaged, the matching filter channels are summed, and the
//! convolution runs on the reduced depth. The output keeps the shape of a
//! regular convolution.
//!
//! The crate is `no_std` (with `alloc`) and purely computational:
//!
//! - [`tensor`]: dense feature maps, filter banks, padding and the direct
//!   convolution used as the correctness reference.
//! - [`lsh`]: ternary hyperplanes and bucket codes.
//! - [`haste`]: patch rasterization, bucket assignment, merging and the
//!   compressed forward pass.
//! - [`flops`]: the analytic cost model and the instrumented ledger.
//! - [`rng`]: the counter-based generator every random draw goes through.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod flops;
pub mod haste;
pub mod lsh;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use flops::{FlopComponents, FlopsLedger, LayerParams};
pub use haste::{
    haste_forward, haste_forward_1x1, BucketAssignment, Centering, HasteConfig, HasteOutput,
    PatchStats, SelectionMode,
};
pub use lsh::{BucketCode, HashConfig, HyperplaneSet};
pub use tensor::{conv2d_direct, mac_count_regular, pad, FeatureMap, FilterBank, PaddingSpec};
