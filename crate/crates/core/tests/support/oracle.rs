//! Brute-force reference for the compressed convolution.
//!
//! Everything here is recomputed from scratch per output pixel: the patch
//! containing the pixel, the centered channel vectors, a dense dot product
//! per hyperplane, the bucket map, and finally the grouped sum
//!
//! ```text
//! y_j(p) = sum_l < sum_{i in S_l} F_ji , mean_{i in S_l} X_i(window p) >
//! ```
//!
//! evaluated in `f64`. Only the public tensor accessors of the crate are used.

#![allow(dead_code)]

use std::collections::BTreeMap;

use haste_core::{FeatureMap, FilterBank};

pub struct Grouped {
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub output: Vec<f64>,
    /// Patch index -> (occupied buckets, buckets with two or more channels).
    pub census: BTreeMap<usize, (usize, usize)>,
}

impl Grouped {
    pub fn get(&self, j: usize, y: usize, x: usize) -> f64 {
        self.output[(j * self.height + y) * self.width + x]
    }

    pub fn mean_r(&self, c_in: usize) -> f64 {
        let merged: usize = self.census.values().map(|(g, _)| c_in - g).sum();
        merged as f64 / (self.census.len() * c_in) as f64
    }
}

fn at(map: &FeatureMap, c: usize, y: isize, x: isize) -> f32 {
    if y < 0 || x < 0 || y >= map.height() as isize || x >= map.width() as isize {
        0.0
    } else {
        map.get(c, y as usize, x as usize)
    }
}

/// `planes` holds `L` dense ternary rows of the patch area.
pub fn grouped(map: &FeatureMap, filters: &FilterBank, halo: usize, planes: &[Vec<i8>]) -> Grouped {
    let (c_in, h, w) = map.shape();
    let k = filters.kernel();
    let c_out = filters.out_channels();
    let (core, g) = if k == 1 { (3, 0) } else { (k, halo) };
    let pad = k / 2;
    let side = core + 2 * g;
    let cores_x = (w + 2 * pad).div_ceil(core);

    let mut groups_of: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    let mut output = vec![0.0; c_out * h * w];

    for y in 0..h {
        for x in 0..w {
            let (pr, pc) = ((y + pad) / core, (x + pad) / core);
            let index = pr * cores_x + pc;
            let groups = groups_of.entry(index).or_insert_with(|| {
                let top = (pr * core) as isize - g as isize - pad as isize;
                let left = (pc * core) as isize - g as isize - pad as isize;
                let raw: Vec<Vec<f32>> = (0..c_in)
                    .map(|c| {
                        let mut v = Vec::with_capacity(side * side);
                        for a in 0..side as isize {
                            for b in 0..side as isize {
                                v.push(at(map, c, top + a, left + b));
                            }
                        }
                        v
                    })
                    .collect();
                let mut buckets: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
                for c in 0..c_in {
                    let centered: Vec<f32> = (0..side * side)
                        .map(|t| {
                            let mean = raw.iter().map(|r| r[t] as f64).sum::<f64>() / c_in as f64;
                            (raw[c][t] as f64 - mean) as f32
                        })
                        .collect();
                    let mut code = 0u64;
                    for (l, plane) in planes.iter().enumerate() {
                        let dot: f64 = plane
                            .iter()
                            .zip(&centered)
                            .map(|(&e, &v)| e as f64 * v as f64)
                            .sum();
                        if dot > 0.0 {
                            code |= 1 << l;
                        }
                    }
                    buckets.entry(code).or_default().push(c);
                }
                buckets.into_values().collect()
            });

            for j in 0..c_out {
                let mut acc = 0.0f64;
                for group in groups.iter() {
                    for u in 0..k {
                        for v in 0..k {
                            let wsum: f64 =
                                group.iter().map(|&i| filters.get(j, i, u, v) as f64).sum();
                            let yy = (y + u) as isize - pad as isize;
                            let xx = (x + v) as isize - pad as isize;
                            let xmean: f64 = group
                                .iter()
                                .map(|&i| at(map, i, yy, xx) as f64)
                                .sum::<f64>()
                                / group.len() as f64;
                            acc += wsum * xmean;
                        }
                    }
                }
                output[(j * h + y) * w + x] = acc;
            }
        }
    }

    let census = groups_of
        .into_iter()
        .map(|(p, g)| (p, (g.len(), g.iter().filter(|s| s.len() >= 2).count())))
        .collect();
    Grouped {
        c_out,
        height: h,
        width: w,
        output,
        census,
    }
}

/// `max |a - b| / max |b|`, the normwise relative deviation.
pub fn rel_error(a: &FeatureMap, reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = a
        .data()
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (x, y)| m.max((*x as f64 - y).abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}
