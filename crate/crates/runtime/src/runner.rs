//! Layer substitution, seed-averaged evaluation and per-layer comparison.

use haste_core::flops::FlopsLedger;
use haste_core::rng::derive_seed;
use haste_core::{Centering, FeatureMap, HasteConfig, HyperplaneSet, SelectionMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, RuntimeError};
use crate::model::{argmax, ConvPlan, Model, Plan};
use crate::report::{build_report, EvalReport};

/// Environment variable capping the worker threads (0 or unset: all cores).
pub const THREADS_ENV: &str = "HASTE_THREADS";

/// Stream of the per-layer seed that drives the random grouping ablation.
const RANDOM_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Haste,
    Random,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Haste => "haste",
            Mode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HasteSettings {
    pub mode: Mode,
    pub planes: usize,
    pub sparsity: f64,
    pub halo: usize,
    pub centering: Centering,
}

impl Default for HasteSettings {
    fn default() -> Self {
        Self {
            mode: Mode::Haste,
            planes: 16,
            sparsity: 0.5,
            halo: 1,
            centering: Centering::ChannelMean,
        }
    }
}

impl HasteSettings {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_planes(mut self, planes: usize) -> Self {
        self.planes = planes;
        self
    }

    pub fn with_halo(mut self, halo: usize) -> Self {
        self.halo = halo;
        self
    }
}

/// Plans every eligible convolution with conv ordinal `>= start_layer` for
/// compressed execution.
///
/// Layer `k` hashes with planes seeded by `derive_seed(seed, k)`; the random
/// ablation draws its groups from a second stream of that seed. Baseline mode
/// and a `start_layer` past the last convolution leave the graph unchanged.
pub fn swap_haste(
    model: &Model,
    start_layer: usize,
    settings: &HasteSettings,
    seed: u64,
) -> Result<Plan> {
    let mut plan = Plan::baseline(model);
    if settings.mode == Mode::Baseline {
        return Ok(plan);
    }
    let selection = match settings.mode {
        Mode::Random => SelectionMode::Random,
        _ => SelectionMode::Lsh,
    };
    for conv in model.convs() {
        if conv.ordinal < start_layer || !conv.haste_eligible {
            continue;
        }
        let layer_seed = derive_seed(seed, conv.ordinal as u64);
        let mut cfg = HasteConfig::new(
            conv.filters.kernel(),
            settings.halo,
            settings.planes,
            settings.sparsity,
            layer_seed,
        )
        .map_err(|e| RuntimeError::at_layer(conv.index, e.to_string()))?
        .with_selection(selection)
        .with_centering(settings.centering);
        cfg.random_seed = derive_seed(layer_seed, RANDOM_STREAM);
        let planes = HyperplaneSet::generate(cfg.hash)?;
        plan.convs[conv.ordinal] = Some(ConvPlan { cfg, planes });
    }
    Ok(plan)
}

/// Worker pool honouring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            RuntimeError::Usage(format!(
                "{THREADS_ENV} must be a non-negative integer, got {v:?}"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RuntimeError::Usage(format!("cannot start worker threads: {e}")))
}

/// Outcome of one pass over the dataset.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub correct: usize,
    pub images: usize,
    /// Ledgers summed over all images, by conv ordinal.
    pub ledgers: Vec<Option<FlopsLedger>>,
}

impl SeedRun {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.images as f64
    }
}

pub fn check_dataset(model: &Model, data: &Dataset) -> Result<()> {
    let shape = crate::layers::Shape::Spatial {
        c: data.channels,
        h: data.height,
        w: data.width,
    };
    if shape != model.input_shape {
        return Err(RuntimeError::validation(format!(
            "dataset images are {shape}, model expects {}",
            model.input_shape
        )));
    }
    if data.is_empty() {
        return Err(RuntimeError::validation("dataset is empty"));
    }
    Ok(())
}

/// Classifies every image under `plan`.
pub fn run_plan(model: &Model, data: &Dataset, plan: &Plan, seed: u64) -> Result<SeedRun> {
    check_dataset(model, data)?;
    let per_image: Vec<(bool, Vec<Option<FlopsLedger>>)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let out = model.forward(data.image(i), plan)?;
            let hit = argmax(&out.logits) as i64 == data.labels()[i];
            Ok((hit, out.ledgers))
        })
        .collect::<Result<_>>()?;
    let mut ledgers: Vec<Option<FlopsLedger>> = vec![None; model.conv_count()];
    let mut correct = 0;
    for (hit, image_ledgers) in per_image {
        correct += usize::from(hit);
        for (acc, ledger) in ledgers.iter_mut().zip(image_ledgers) {
            match (acc.as_mut(), ledger) {
                (Some(a), Some(l)) => a.merge(&l)?,
                (None, Some(l)) => *acc = Some(l),
                _ => {}
            }
        }
    }
    Ok(SeedRun {
        seed,
        correct,
        images: data.len(),
        ledgers,
    })
}

/// Seed-averaged accuracy and FLOPs report.
///
/// Seeds only enter through the hyperplanes and random groupings, so the
/// baseline is evaluated once and repeated for every seed.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    settings: &HasteSettings,
    seeds: &[u64],
    start_layer: usize,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(RuntimeError::Usage("at least one seed is required".into()));
    }
    check_dataset(model, data)?;
    let pool = thread_pool()?;
    let runs = pool.install(|| -> Result<Vec<SeedRun>> {
        if settings.mode == Mode::Baseline {
            let run = run_plan(model, data, &Plan::baseline(model), seeds[0])?;
            Ok(seeds
                .iter()
                .map(|&seed| SeedRun {
                    seed,
                    ..run.clone()
                })
                .collect())
        } else {
            seeds
                .iter()
                .map(|&seed| {
                    let plan = swap_haste(model, start_layer, settings, seed)?;
                    run_plan(model, data, &plan, seed)
                })
                .collect()
        }
    })?;
    Ok(build_report(model, settings, seeds, start_layer, &runs))
}

/// Output deviation of one convolution between the regular and the
/// compressed network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub index: usize,
    pub conv_index: usize,
    pub pruned: bool,
    pub mean_r: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
    /// `max |delta| / max |regular|`.
    pub max_rel: f64,
    /// `mean |delta| / mean |regular|`.
    pub mean_rel: f64,
}

/// Per-convolution output deltas over `data` (typically a handful of
/// images). Deviations accumulate: each network runs on its own activations.
pub fn compare(
    model: &Model,
    data: &Dataset,
    settings: &HasteSettings,
    seed: u64,
    start_layer: usize,
) -> Result<Vec<LayerDelta>> {
    check_dataset(model, data)?;
    let plan = swap_haste(model, start_layer, settings, seed)?;
    let baseline = Plan::baseline(model);
    let n = model.conv_count();
    // max_abs, sum_abs, max_ref, sum_ref, count
    let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize); n];
    let mut ledgers: Vec<Option<FlopsLedger>> = vec![None; n];
    for i in 0..data.len() {
        let mut reference: Vec<Option<FeatureMap>> = vec![None; n];
        model.forward_observed(data.image(i), &baseline, &mut |k, _, y| {
            reference[k] = Some(y.clone())
        })?;
        let mut compressed: Vec<Option<FeatureMap>> = vec![None; n];
        let out = model.forward_observed(data.image(i), &plan, &mut |k, _, y| {
            compressed[k] = Some(y.clone())
        })?;
        for k in 0..n {
            let (Some(r), Some(c)) = (&reference[k], &compressed[k]) else {
                continue;
            };
            let slot = &mut acc[k];
            for (a, b) in c.data().iter().zip(r.data()) {
                let d = (f64::from(*a) - f64::from(*b)).abs();
                slot.0 = slot.0.max(d);
                slot.1 += d;
                slot.2 = slot.2.max(f64::from(*b).abs());
                slot.3 += f64::from(*b).abs();
                slot.4 += 1;
            }
        }
        for (total, ledger) in ledgers.iter_mut().zip(out.ledgers) {
            match (total.as_mut(), ledger) {
                (Some(t), Some(l)) => t.merge(&l)?,
                (None, Some(l)) => *total = Some(l),
                _ => {}
            }
        }
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    Ok(model
        .convs()
        .map(|conv| {
            let (max_abs, sum_abs, max_ref, sum_ref, count) = acc[conv.ordinal];
            let count = count.max(1) as f64;
            let ledger = ledgers[conv.ordinal].as_ref();
            LayerDelta {
                index: conv.index,
                conv_index: conv.ordinal,
                pruned: ledger.is_some(),
                mean_r: ledger.map_or(0.0, FlopsLedger::mean_r),
                max_abs,
                mean_abs: sum_abs / count,
                max_rel: ratio(max_abs, max_ref),
                mean_rel: ratio(sum_abs, sum_ref),
            }
        })
        .collect())
}
