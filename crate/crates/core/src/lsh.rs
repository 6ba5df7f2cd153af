//! Sparse random-projection LSH.
//!
//! Each of the `L` hyperplane normals has entries in `{-1, 0, +1}`. Bit `l`
//! of a vector's code is 1 iff its dot product with normal `l` is strictly
//! positive, and the bucket code is `sum_l 2^(l-1) * bit_l`. Dot products are
//! signed sums over the non-zero plane entries, accumulated in `f64` in
//! ascending coordinate order, so hashing needs no multiplications.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Largest supported plane count; codes must fit comfortably in a `u64`.
pub const MAX_PLANES: usize = 62;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashConfig {
    /// Number of hyperplanes `L`.
    pub planes: usize,
    /// Expected fraction `s` of zero entries, in `(0, 1)`.
    pub sparsity: f64,
    /// Vector dimension `d`.
    pub dim: usize,
    pub seed: u64,
}

impl HashConfig {
    pub fn new(planes: usize, sparsity: f64, dim: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            planes,
            sparsity,
            dim,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(Error::Config(format!(
                "sparsity must lie in (0, 1), got {}",
                self.sparsity
            )));
        }
        if self.planes == 0 || self.planes > MAX_PLANES {
            return Err(Error::Config(format!(
                "hyperplane count must lie in 1..={MAX_PLANES}, got {}",
                self.planes
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("hash dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Bucket label in `[0, 2^L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BucketCode(pub u64);

/// `L` ternary normals of dimension `d`, stored densely and as sparse
/// `(coordinate, sign)` lists for hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneSet {
    config: HashConfig,
    entries: Vec<i8>,
    sparse: Vec<(u32, bool)>,
    offsets: Vec<usize>,
}

impl HyperplaneSet {
    /// Draws the planes from the counter-based generator.
    ///
    /// One uniform `u` per entry, plane 1 first and coordinates in order
    /// within a plane: `0` if `u < s`, `+1` if `u < s + (1 - s) / 2`, else
    /// `-1`. The planes for `L` are therefore a prefix of those for any
    /// larger `L` with the same seed, sparsity and dimension.
    pub fn generate(config: HashConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = CounterRng::new(config.seed);
        let s = config.sparsity;
        let plus = s + (1.0 - s) / 2.0;
        let entries = (0..config.planes * config.dim)
            .map(|_| {
                let u = rng.next_f64();
                if u < s {
                    0
                } else if u < plus {
                    1
                } else {
                    -1
                }
            })
            .collect();
        Ok(Self::build(config, entries))
    }

    /// Wraps explicit planes (row-major, `L x d`).
    pub fn from_entries(config: HashConfig, entries: Vec<i8>) -> Result<Self> {
        config.validate()?;
        if entries.len() != config.planes * config.dim {
            return Err(Error::Shape(format!(
                "expected {} plane entries, got {}",
                config.planes * config.dim,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !(-1..=1).contains(*e)) {
            return Err(Error::Config(format!("plane entry {bad} is not ternary")));
        }
        Ok(Self::build(config, entries))
    }

    fn build(config: HashConfig, entries: Vec<i8>) -> Self {
        let mut sparse = Vec::new();
        let mut offsets = Vec::with_capacity(config.planes + 1);
        offsets.push(0);
        for plane in entries.chunks(config.dim) {
            for (idx, e) in plane.iter().enumerate() {
                if *e != 0 {
                    sparse.push((idx as u32, *e > 0));
                }
            }
            offsets.push(sparse.len());
        }
        Self {
            config,
            entries,
            sparse,
            offsets,
        }
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn planes(&self) -> usize {
        self.config.planes
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Dense view of plane `l` (0-based).
    pub fn plane(&self, l: usize) -> &[i8] {
        &self.entries[l * self.config.dim..(l + 1) * self.config.dim]
    }

    /// Total non-zero entries over all planes: the signed additions needed to
    /// hash one vector.
    pub fn nonzeros(&self) -> u64 {
        self.sparse.len() as u64
    }

    /// Hashes `x` without checking its length.
    #[inline]
    pub(crate) fn code_unchecked(&self, x: &[f32]) -> BucketCode {
        self.code_counted(x).0
    }

    /// Hashes `x` and reports the signed additions performed.
    #[inline]
    pub(crate) fn code_counted(&self, x: &[f32]) -> (BucketCode, u64) {
        let mut code = 0u64;
        let mut adds = 0u64;
        for l in 0..self.config.planes {
            let mut acc = 0.0f64;
            let terms = &self.sparse[self.offsets[l]..self.offsets[l + 1]];
            adds += terms.len() as u64;
            for &(idx, positive) in terms {
                let v = f64::from(x[idx as usize]);
                if positive {
                    acc += v;
                } else {
                    acc -= v;
                }
            }
            if acc > 0.0 {
                code |= 1 << l;
            }
        }
        (BucketCode(code), adds)
    }

    /// Bucket code of `x`.
    pub fn hash(&self, x: &[f32]) -> Result<BucketCode> {
        if x.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                found: x.len(),
            });
        }
        Ok(self.code_unchecked(x))
    }
}

/// Side of a single ternary hyperplane: `true` iff `plane . x > 0`.
pub fn hash_bit(plane: &[i8], x: &[f32]) -> Result<bool> {
    if plane.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: plane.len(),
            found: x.len(),
        });
    }
    let mut acc = 0.0f64;
    for (p, v) in plane.iter().zip(x) {
        match p {
            1 => acc += f64::from(*v),
            -1 => acc -= f64::from(*v),
            _ => {}
        }
    }
    Ok(acc > 0.0)
}

/// Bucket code of `x` under `planes`.
pub fn hash_vector(planes: &HyperplaneSet, x: &[f32]) -> Result<BucketCode> {
    planes.hash(x)
}
