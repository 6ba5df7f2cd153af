//! Evaluation reports and their JSON / CSV renderings.
//!
//! Accuracies and FLOPs reductions are percentages rounded to two decimals.
//! Per-layer FLOPs are integer totals over every image and every seed, so
//! the network reduction can be recomputed from the layer table as
//! `100 * (1 - sum(flops_analytic) / sum(flops_baseline))`.

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::runner::{HasteSettings, LayerDelta, Mode, SeedRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mode: Mode,
    /// Hyperplanes per layer; absent for the baseline.
    #[serde(rename = "L")]
    pub planes: Option<usize>,
    pub s: Option<f64>,
    pub g: Option<usize>,
    pub seeds: Vec<u64>,
    pub start_layer: usize,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: String,
    pub conv_index: Option<usize>,
    pub pruned: bool,
    pub mean_r: f64,
    pub mean_m: f64,
    pub flops_baseline: u64,
    /// Exact-mode cost model.
    pub flops_analytic: u64,
    /// Cost model evaluated at the mean `r` and `m`.
    pub flops_averaged: u64,
    /// Counted by the kernels.
    pub flops_measured: u64,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub accuracy_per_seed: Vec<f64>,
    pub correct_per_seed: Vec<usize>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub flops_reduction_per_seed: Vec<f64>,
    pub flops_reduction_mean: f64,
    pub flops_reduction_std: f64,
    /// Channel-weighted mean `r` over all compressed patches.
    pub mean_r: f64,
    pub flops_baseline: u64,
    pub flops_analytic: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub layers: Vec<LayerReport>,
    pub network: NetworkReport,
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn pct_reduction(cost: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        100.0 * (1.0 - cost as f64 / baseline as f64)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn build_report(
    model: &Model,
    settings: &HasteSettings,
    seeds: &[u64],
    start_layer: usize,
    runs: &[SeedRun],
) -> EvalReport {
    let images = runs.first().map_or(0, |r| r.images);
    let costs = model.costs();
    let per_run = images as u64;

    let mut layers = Vec::with_capacity(costs.len());
    let mut merged_channels = 0u64;
    let mut channel_slots = 0u64;
    for cost in &costs {
        let baseline = cost.flops * per_run * runs.len() as u64;
        let mut analytic = 0;
        let mut averaged = 0;
        let mut measured = 0;
        let mut patches = 0u64;
        let mut merged = 0u64;
        let mut buckets = 0u64;
        let mut pruned = false;
        for run in runs {
            let ledger = cost
                .conv_ordinal
                .and_then(|k| run.ledgers.get(k))
                .and_then(Option::as_ref);
            match ledger {
                Some(l) => {
                    pruned = true;
                    analytic += l.analytic.total();
                    averaged += l.averaged().total();
                    measured += l.measured.total();
                    patches += l.patch_count;
                    merged += l.merged_channels;
                    buckets += l.merged_buckets;
                    channel_slots += l.patch_count * l.params.c_in as u64;
                }
                None => {
                    let regular = cost.flops * per_run;
                    analytic += regular;
                    averaged += regular;
                    measured += regular;
                }
            }
        }
        merged_channels += merged;
        let (mean_r, mean_m) = if patches == 0 {
            (0.0, 0.0)
        } else {
            let c_in = runs
                .iter()
                .find_map(|r| r.ledgers[cost.conv_ordinal?].as_ref())
                .map_or(1, |l| l.params.c_in) as f64;
            (
                merged as f64 / (patches as f64 * c_in),
                buckets as f64 / patches as f64,
            )
        };
        layers.push(LayerReport {
            index: cost.index,
            kind: cost.kind.to_string(),
            conv_index: cost.conv_ordinal,
            pruned,
            mean_r,
            mean_m,
            flops_baseline: baseline,
            flops_analytic: analytic,
            flops_averaged: averaged,
            flops_measured: measured,
            reduction_pct: round2(pct_reduction(analytic, baseline)),
        });
    }

    let regular_per_run: u64 = costs.iter().map(|c| c.flops).sum::<u64>() * per_run;
    let accuracy: Vec<f64> = runs.iter().map(|r| 100.0 * r.accuracy()).collect();
    let reduction: Vec<f64> = runs
        .iter()
        .map(|run| {
            let cost: u64 = costs
                .iter()
                .map(|c| {
                    c.conv_ordinal
                        .and_then(|k| run.ledgers[k].as_ref())
                        .map_or(c.flops * per_run, |l| l.analytic.total())
                })
                .sum();
            pct_reduction(cost, regular_per_run)
        })
        .collect();
    let (acc_mean, acc_std) = mean_std(&accuracy);
    let (red_mean, red_std) = mean_std(&reduction);
    let haste = settings.mode != Mode::Baseline;
    EvalReport {
        meta: ReportMeta {
            mode: settings.mode,
            planes: haste.then_some(settings.planes),
            s: haste.then_some(settings.sparsity),
            g: haste.then_some(settings.halo),
            seeds: seeds.to_vec(),
            start_layer,
            images,
        },
        network: NetworkReport {
            accuracy_per_seed: accuracy.iter().copied().map(round2).collect(),
            correct_per_seed: runs.iter().map(|r| r.correct).collect(),
            accuracy_mean: round2(acc_mean),
            accuracy_std: round2(acc_std),
            flops_reduction_per_seed: reduction.iter().copied().map(round2).collect(),
            flops_reduction_mean: round2(red_mean),
            flops_reduction_std: round2(red_std),
            mean_r: if channel_slots == 0 {
                0.0
            } else {
                merged_channels as f64 / channel_slots as f64
            },
            flops_baseline: layers.iter().map(|l| l.flops_baseline).sum(),
            flops_analytic: layers.iter().map(|l| l.flops_analytic).sum(),
        },
        layers,
    }
}

impl EvalReport {
    /// Network reduction recomputed from the layer table.
    pub fn recomputed_reduction(&self) -> f64 {
        let base: u64 = self.layers.iter().map(|l| l.flops_baseline).sum();
        let cost: u64 = self.layers.iter().map(|l| l.flops_analytic).sum();
        pct_reduction(cost, base)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-layer table.
    pub fn layers_csv(&self) -> String {
        to_csv(&self.layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "L")]
    pub planes: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub flops_reduction_mean: f64,
    pub mean_r: f64,
}

impl SweepRow {
    pub fn from_report(report: &EvalReport) -> Self {
        Self {
            planes: report.meta.planes.unwrap_or(0),
            accuracy_mean: report.network.accuracy_mean,
            accuracy_std: report.network.accuracy_std,
            flops_reduction_mean: report.network.flops_reduction_mean,
            mean_r: (report.network.mean_r * 1e6).round() / 1e6,
        }
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf-8")
}

pub fn deltas_csv(deltas: &[LayerDelta]) -> String {
    to_csv(deltas)
}
