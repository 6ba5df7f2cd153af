//! Grouping of channels into hash buckets.

use alloc::format;
use alloc::vec::Vec;

use super::patch::ChannelVectors;
use crate::error::{Error, Result};
use crate::lsh::{BucketCode, HyperplaneSet};
use crate::rng::CounterRng;

/// Partition of a patch's channels into occupied buckets.
///
/// Groups are ordered by ascending bucket code; channel indices within a
/// group are ascending. This fixes the summation order of every merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketAssignment {
    codes: Vec<BucketCode>,
    groups: Vec<Vec<usize>>,
}

impl BucketAssignment {
    /// Groups channels that share a code.
    pub fn from_codes(codes: Vec<BucketCode>) -> Self {
        let mut order: Vec<usize> = (0..codes.len()).collect();
        order.sort_by_key(|&i| codes[i]);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut last = None;
        for i in order {
            if last == Some(codes[i]) {
                if let Some(g) = groups.last_mut() {
                    g.push(i);
                }
            } else {
                groups.push(alloc::vec![i]);
                last = Some(codes[i]);
            }
        }
        Self { codes, groups }
    }

    /// Every channel in its own bucket.
    pub fn identity(channels: usize) -> Self {
        Self::from_codes((0..channels as u64).map(BucketCode).collect())
    }

    pub fn channels(&self) -> usize {
        self.codes.len()
    }

    pub fn codes(&self) -> &[BucketCode] {
        &self.codes
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Occupied buckets, the reduced depth `C~_in`.
    pub fn reduced_channels(&self) -> usize {
        self.groups.len()
    }

    /// Buckets holding at least two channels (`m`).
    pub fn merged_buckets(&self) -> usize {
        self.groups.iter().filter(|g| g.len() >= 2).count()
    }

    /// `C_in - C~_in`, equal to `sum_l max(|S_l| - 1, 0)`.
    pub fn merged_channels(&self) -> usize {
        self.channels() - self.reduced_channels()
    }

    /// Compression ratio `r = 1 - C~_in / C_in`.
    pub fn ratio(&self) -> f64 {
        self.merged_channels() as f64 / self.channels() as f64
    }

    pub fn is_identity(&self) -> bool {
        self.groups.len() == self.codes.len()
    }
}

/// Hashes every vector and groups equal codes.
pub fn assign_buckets(
    vectors: &ChannelVectors,
    planes: &HyperplaneSet,
) -> Result<BucketAssignment> {
    if vectors.dim() != planes.dim() {
        return Err(Error::DimensionMismatch {
            expected: planes.dim(),
            found: vectors.dim(),
        });
    }
    Ok(BucketAssignment::from_codes(
        vectors.iter().map(|v| planes.code_unchecked(v)).collect(),
    ))
}

/// Random grouping with prescribed bucket sizes.
///
/// The channels `0..channels` are shuffled and cut into consecutive groups of
/// `sizes[0], sizes[1], ...`, so `r` and `m` equal those of the assignment
/// the sizes came from. Channels of group `k` receive code `k`.
pub fn assign_random(sizes: &[usize], channels: usize, seed: u64) -> Result<BucketAssignment> {
    let sum: usize = sizes.iter().sum();
    if sum != channels {
        return Err(Error::Config(format!(
            "bucket sizes sum to {sum}, expected {channels} channels"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("bucket sizes must be positive".into()));
    }
    let mut perm: Vec<usize> = (0..channels).collect();
    CounterRng::new(seed).shuffle(&mut perm);
    let mut codes = alloc::vec![BucketCode(0); channels];
    let mut groups = Vec::with_capacity(sizes.len());
    let mut rest = perm.as_slice();
    for (k, &size) in sizes.iter().enumerate() {
        let (head, tail) = rest.split_at(size);
        let mut group = head.to_vec();
        group.sort_unstable();
        for &c in &group {
            codes[c] = BucketCode(k as u64);
        }
        groups.push(group);
        rest = tail;
    }
    Ok(BucketAssignment { codes, groups })
}
