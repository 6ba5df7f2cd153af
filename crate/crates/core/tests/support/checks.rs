//! Operator-level acceptance checks shared by the core integration tests and
//! the end-to-end acceptance target.

#![allow(dead_code)]

use std::time::Instant;

use haste_core::flops::{flops_centering, flops_hashing};
use haste_core::rng::{derive_seed, CounterRng};
use haste_core::tensor::conv2d_direct_counted;
use haste_core::{
    conv2d_direct, haste_forward, mac_count_regular, FeatureMap, FilterBank, HashConfig,
    HasteConfig, HyperplaneSet, PaddingSpec,
};

use super::oracle::{grouped, rel_error};

pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

pub fn normal_map(rng: &mut CounterRng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.next_normal() as f32).unwrap()
}

pub fn normal_filters(rng: &mut CounterRng, o: usize, i: usize, k: usize) -> FilterBank {
    FilterBank::from_fn(o, i, k, |_, _, _, _| rng.next_normal() as f32).unwrap()
}

/// Channels drawn as positive multiples of a few shared base maps plus
/// noise, so that buckets actually fill up.
pub fn clustered_map(rng: &mut CounterRng, c: usize, h: usize, w: usize) -> FeatureMap {
    let bases = 1 + rng.below(3) as usize;
    let base = normal_map(rng, bases, h, w);
    let owner: Vec<usize> = (0..c).map(|_| rng.below(bases as u64) as usize).collect();
    let gain: Vec<f32> = (0..c).map(|_| 0.5 + rng.next_f64() as f32).collect();
    let noise = 0.05 * rng.next_f64() as f32;
    let jitter = normal_map(rng, c, h, w);
    FeatureMap::from_fn(c, h, w, |i, y, x| {
        gain[i] * base.get(owner[i], y, x) + noise * jitter.get(i, y, x)
    })
    .unwrap()
}

fn dense_planes(planes: &HyperplaneSet) -> Vec<Vec<i8>> {
    (0..planes.planes())
        .map(|l| planes.plane(l).to_vec())
        .collect()
}

pub struct GroupedRun {
    pub worst: f64,
    pub census_mismatches: usize,
    pub merged_patches: usize,
    pub patches: usize,
}

/// Compares `haste_forward` with the brute-force evaluation on one instance.
pub fn grouped_instance(map: &FeatureMap, filters: &FilterBank, cfg: &HasteConfig) -> GroupedRun {
    let planes = HyperplaneSet::generate(cfg.hash).unwrap();
    let out = haste_forward(map, filters, cfg, &planes).unwrap();
    let reference = grouped(map, filters, cfg.halo, &dense_planes(&planes));
    let mut census_mismatches = 0;
    if out.patches.len() != reference.census.len() {
        census_mismatches += 1;
    }
    for stats in &out.patches {
        match reference.census.get(&stats.index) {
            Some(&(g, m)) if g == stats.reduced_channels && m == stats.merged_buckets => {}
            _ => census_mismatches += 1,
        }
    }
    GroupedRun {
        worst: rel_error(&out.output, &reference.output),
        census_mismatches,
        merged_patches: out
            .patches
            .iter()
            .filter(|p| p.reduced_channels < p.channels)
            .count(),
        patches: out.patches.len(),
    }
}

/// Random 3x3 instances with `C_in <= 16`, `C_out <= 8`, `H = W <= 12`,
/// `L` in {8, 16}, `s = 1/2`.
pub fn grouped_suite(instances: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    let mut merged = 0;
    let mut patches = 0;
    for n in 0..instances {
        let mut rng = CounterRng::new(derive_seed(seed, n as u64));
        let c_in = 1 + rng.below(16) as usize;
        let c_out = 1 + rng.below(8) as usize;
        let side = 3 + rng.below(10) as usize;
        let planes = if n % 2 == 0 { 8 } else { 16 };
        let map = if n % 3 == 0 {
            normal_map(&mut rng, c_in, side, side)
        } else {
            clustered_map(&mut rng, c_in, side, side)
        };
        let filters = normal_filters(&mut rng, c_out, c_in, 3);
        let cfg = HasteConfig::new(3, 1, planes, 0.5, rng.next_u64()).unwrap();
        let run = grouped_instance(&map, &filters, &cfg);
        worst = worst.max(run.worst);
        mismatches += run.census_mismatches;
        merged += run.merged_patches;
        patches += run.patches;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Outcome::new(
        worst < REL_TOL && mismatches == 0 && merged > 0 && elapsed < 30.0,
        format!(
            "{instances} instances, max rel err {worst:.2e}, census mismatches {mismatches}, \
             {merged}/{patches} patches merged, {elapsed:.2} s"
        ),
    )
}

/// Channels copied from a few base maps in known groups.
pub fn distributive_suite() -> Outcome {
    let cases: [(usize, &[usize], usize, usize); 5] = [
        (3, &[0, 0, 1, 1, 2, 2], 9, 9),
        (3, &[0, 1, 0, 1, 0, 1, 2, 3], 8, 11),
        (3, &[0, 0, 0, 0, 0], 6, 6),
        (3, &[2, 0, 1, 0, 2, 1, 3, 3, 0, 1, 2, 3], 12, 10),
        (1, &[0, 1, 1, 0, 2, 2, 2], 7, 9),
    ];
    let mut worst = 0.0f64;
    let mut ratio_ok = true;
    let mut detail = Vec::new();
    for (n, (k, owner, h, w)) in cases.iter().enumerate() {
        let mut rng = CounterRng::new(1000 + n as u64);
        let groups = owner.iter().max().unwrap() + 1;
        let base = normal_map(&mut rng, groups, *h, *w);
        let map =
            FeatureMap::from_fn(owner.len(), *h, *w, |i, y, x| base.get(owner[i], y, x)).unwrap();
        let filters = normal_filters(&mut rng, 4, owner.len(), *k);
        let cfg = HasteConfig::new(*k, 1, 32, 0.5, 7 + n as u64).unwrap();
        let planes = HyperplaneSet::generate(cfg.hash).unwrap();
        let out = haste_forward(&map, &filters, &cfg, &planes).unwrap();
        let direct = conv2d_direct(&map, &filters, PaddingSpec::same(*k)).unwrap();
        let reference: Vec<f64> = direct.data().iter().map(|v| *v as f64).collect();
        worst = worst.max(rel_error(&out.output, &reference));
        let expected = 1.0 - groups as f64 / owner.len() as f64;
        let per_patch = (owner.len() - groups) as u64;
        ratio_ok &= out.ledger.merged_channels == per_patch * out.ledger.patch_count;
        detail.push(format!("r={:.4}/{expected:.4}", out.mean_r()));
    }
    Outcome::new(
        worst < REL_TOL && ratio_ok,
        format!("max rel err {worst:.2e}, {}", detail.join(" ")),
    )
}

/// Cases built so that no two channels of a patch can share a code.
pub fn zero_compression_suite() -> Outcome {
    let mut worst = 0.0f64;
    let mut max_r = 0.0f64;

    // One hot channel per pixel, hot index (y + 2x) mod 4; every patch holds
    // a 2x2 block of real pixels, so each channel is hot somewhere. With
    // axis-aligned planes, bit t of channel i is set iff i is hot at t.
    for (n, (h, w)) in [(6usize, 6usize), (9, 12), (12, 12), (5, 8)]
        .into_iter()
        .enumerate()
    {
        let mut rng = CounterRng::new(2000 + n as u64);
        let hot: Vec<f32> = (0..h * w).map(|_| 0.5 + rng.next_f64() as f32).collect();
        let map = FeatureMap::from_fn(4, h, w, |i, y, x| {
            if (y + 2 * x) % 4 == i {
                hot[y * w + x]
            } else {
                0.0
            }
        })
        .unwrap();
        let filters = normal_filters(&mut rng, 3, 4, 3);
        let dim = 25;
        let mut entries = vec![0i8; dim * dim];
        for t in 0..dim {
            entries[t * dim + t] = 1;
        }
        let planes =
            HyperplaneSet::from_entries(HashConfig::new(dim, 0.5, dim, 0).unwrap(), entries)
                .unwrap();
        let cfg = HasteConfig::new(3, 1, dim, 0.5, 0).unwrap();
        let out = haste_forward(&map, &filters, &cfg, &planes).unwrap();
        let direct = conv2d_direct(&map, &filters, PaddingSpec::same(3)).unwrap();
        let reference: Vec<f64> = direct.data().iter().map(|v| *v as f64).collect();
        worst = worst.max(rel_error(&out.output, &reference));
        max_r = max_r.max(out.mean_r());
    }

    // Generic data against 62 random planes. Pointwise patches tile the map
    // exactly, so none of them is a lone pixel.
    for (n, (c, k, halo, h, w)) in [(6, 3, 1, 10, 10), (10, 3, 2, 10, 10), (8, 1, 1, 9, 12)]
        .into_iter()
        .enumerate()
    {
        let mut rng = CounterRng::new(3000 + n as u64);
        let map = normal_map(&mut rng, c, h, w);
        let filters = normal_filters(&mut rng, 5, c, k);
        let cfg = HasteConfig::new(k, halo, 62, 0.5, n as u64).unwrap();
        let planes = HyperplaneSet::generate(cfg.hash).unwrap();
        let out = haste_forward(&map, &filters, &cfg, &planes).unwrap();
        let direct = conv2d_direct(&map, &filters, PaddingSpec::same(k)).unwrap();
        let reference: Vec<f64> = direct.data().iter().map(|v| *v as f64).collect();
        worst = worst.max(rel_error(&out.output, &reference));
        max_r = max_r.max(out.mean_r());
    }
    Outcome::new(
        worst < REL_TOL && max_r == 0.0,
        format!("max r {max_r}, max rel err {worst:.2e}"),
    )
}

pub struct FlopsRun {
    /// Exact-mode analytic components equal the instrumented counts.
    pub exact: Outcome,
    /// Averaged-mode totals against exact-mode totals.
    pub averaged: Outcome,
    pub worst_gap: f64,
    /// Averaged merge_filters and reduced_conv equal exact mode up to rounding.
    pub linear_terms_agree: bool,
    /// Largest relative gap of the averaged hashing component.
    pub worst_hashing_gap: f64,
}

/// Exact-mode components against instrumented counts, and the averaged
/// totals against the exact ones.
pub fn flops_suite(configs: usize, seed: u64) -> FlopsRun {
    let mut mismatched = Vec::new();
    let mut linear_terms_agree = true;
    let mut worst_gap = 0.0f64;
    let mut worst_hashing_share = 0.0f64;
    let mut worst_hashing_gap = 0.0f64;
    for n in 0..configs {
        let mut rng = CounterRng::new(derive_seed(seed, n as u64));
        let kernel = if n % 5 == 4 { 1 } else { 3 };
        let halo = 1 + rng.below(if kernel == 1 { 1 } else { 3 }) as usize;
        let c_in = 4 + rng.below(29) as usize;
        let c_out = 4 + rng.below(29) as usize;
        let h = 8 + rng.below(25) as usize;
        let w = 8 + rng.below(25) as usize;
        let planes = 4 + rng.below(17) as usize;
        let map = clustered_map(&mut rng, c_in, h, w);
        let filters = normal_filters(&mut rng, c_out, c_in, kernel);
        let cfg = HasteConfig::new(kernel, halo, planes, 0.5, rng.next_u64()).unwrap();
        let hp = HyperplaneSet::generate(cfg.hash).unwrap();
        let out = haste_forward(&map, &filters, &cfg, &hp).unwrap();
        let ledger = &out.ledger;
        if ledger.analytic != ledger.measured {
            mismatched.push(n);
        }
        let averaged = ledger.averaged();
        let exact = &ledger.analytic;
        linear_terms_agree &= averaged.merge_filters.abs_diff(exact.merge_filters) <= 1
            && averaged.reduced_conv.abs_diff(exact.reduced_conv) <= 1;
        let total = ledger.total() as f64;
        worst_gap = worst_gap.max(averaged.total().abs_diff(ledger.total()) as f64 / total);
        let hashing_gap = averaged.hashing.abs_diff(exact.hashing) as f64;
        worst_hashing_share = worst_hashing_share.max(hashing_gap / total);
        worst_hashing_gap = worst_hashing_gap.max(hashing_gap / exact.hashing as f64);
    }
    FlopsRun {
        exact: Outcome::new(
            mismatched.is_empty(),
            format!("{configs} configs, all five components equal instrumentation; mismatches {mismatched:?}"),
        ),
        averaged: Outcome::new(
            worst_gap < 0.005,
            format!(
                "worst averaged/exact total gap {:.3}% (tolerance 0.5%); merge_filters and \
                 reduced_conv agree: {linear_terms_agree}; hashing at expected plane density vs \
                 sampled non-zeros: up to {:.2}% of the hashing term, {:.3}% of the total",
                100.0 * worst_gap,
                100.0 * worst_hashing_gap,
                100.0 * worst_hashing_share
            ),
        ),
        worst_gap,
        linear_terms_agree,
        worst_hashing_gap,
    }
}

pub fn spot_values() -> Outcome {
    let mac = mac_count_regular(2, 3, 4, 4, 3);
    let centering = flops_centering(9, 2, 3, 1);
    let hashing = flops_hashing(9, 2, 16, 3, 1, 0.5);
    let mut rng = CounterRng::new(5);
    let map = normal_map(&mut rng, 2, 4, 4);
    let filters = normal_filters(&mut rng, 3, 2, 3);
    let (_, ops) = conv2d_direct_counted(&map, &filters, PaddingSpec::same(3)).unwrap();
    Outcome::new(
        mac == 1728 && centering == 900 && hashing == 3600 && ops.total() == 1728,
        format!(
            "mac_count_regular {mac}, counted direct conv {}, centering {centering}, hashing {hashing}",
            ops.total()
        ),
    )
}

/// Bit balance, positive-scale invariance and refinement under more planes.
pub fn lsh_suite() -> Outcome {
    let dim = 25;
    let planes = HyperplaneSet::generate(HashConfig::new(16, 0.5, dim, 11).unwrap()).unwrap();
    let mut rng = CounterRng::new(12);
    let samples = 1000;
    let mut ones = [0usize; 16];
    let mut scale_failures = 0;
    for _ in 0..samples {
        let x: Vec<f32> = (0..dim).map(|_| rng.next_normal() as f32).collect();
        let code = planes.hash(&x).unwrap().0;
        for (l, count) in ones.iter_mut().enumerate() {
            *count += (code >> l & 1) as usize;
        }
        let c = (10f64.powf(4.0 * rng.next_f64() - 2.0)) as f32;
        let scaled: Vec<f32> = x.iter().map(|v| v * c).collect();
        if planes.hash(&scaled).unwrap().0 != code {
            scale_failures += 1;
        }
    }
    let sigma = (0.25 / samples as f64).sqrt();
    let worst_dev = ones
        .iter()
        .map(|&n| (n as f64 / samples as f64 - 0.5).abs())
        .fold(0.0, f64::max);

    let mut rng = CounterRng::new(13);
    let map = clustered_map(&mut rng, 12, 12, 12);
    let filters = normal_filters(&mut rng, 4, 12, 3);
    let ratios: Vec<f64> = [4, 8, 12, 16, 20]
        .into_iter()
        .map(|l| {
            let cfg = HasteConfig::new(3, 1, l, 0.5, 14).unwrap();
            let hp = HyperplaneSet::generate(cfg.hash).unwrap();
            haste_forward(&map, &filters, &cfg, &hp).unwrap().mean_r()
        })
        .collect();
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0]);
    Outcome::new(
        worst_dev < 4.0 * sigma && scale_failures == 0 && monotone,
        format!(
            "worst bit deviation {:.2} sigma, scale failures {scale_failures}/{samples}, \
             mean r over L=4..20: {}",
            worst_dev / sigma,
            ratios
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}
