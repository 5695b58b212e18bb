//! Wall-clock throughput measurement for dense vs pruned forward passes.
//!
//! Single-threaded by default so the measurement isolates the algorithmic
//! effect of pruning; `threads` spreads images across workers when asked.
//! Must not run concurrently with other benchmarks in the same process.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ImageTensor;
use crate::model::Model;
use crate::parallel;
use crate::prune::{self, PruneSchedule};
use crate::synth;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Images per timed batch.
    pub n_images: usize,
    /// Untimed warmup forwards before measuring.
    pub n_warmup: usize,
    /// Timed batches; the reported rate is their median.
    pub repeats: usize,
    pub threads: usize,
    /// Seed for the synthetic input images.
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            n_images: 4,
            n_warmup: 1,
            repeats: 3,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub dense_ips: f64,
    pub pruned_ips: f64,
    /// pruned_ips / dense_ips.
    pub ratio: f64,
}

/// Per-rate row of a benchmark sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRateRow {
    pub keep_rate: f64,
    pub images_per_sec: f64,
    pub ratio_vs_dense: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median images/second for one schedule over `repeats` timed batches.
pub fn measure_ips(model: &Model, schedule: &PruneSchedule, opts: &BenchOptions) -> Result<f64> {
    schedule.validate(&model.config)?;
    let images: Vec<ImageTensor> = (0..opts.n_images.max(1))
        .map(|i| synth::random_normalized_image(&model.config, opts.seed.wrapping_add(i as u64)))
        .collect();
    for i in 0..opts.n_warmup {
        prune::pruned_forward(model, &images[i % images.len()], schedule)?;
    }
    let mut rates = Vec::with_capacity(opts.repeats.max(1));
    for _ in 0..opts.repeats.max(1) {
        let batch = images.clone();
        let start = Instant::now();
        let results = parallel::map_ordered(batch, opts.threads, |img| {
            prune::pruned_forward(model, &img, schedule).map(|_| ())
        });
        let elapsed = start.elapsed().as_secs_f64();
        for r in results {
            r?;
        }
        rates.push(images.len() as f64 / elapsed.max(1e-12));
    }
    Ok(median(rates))
}

/// Dense and pruned throughput side by side.
pub fn benchmark(model: &Model, schedule: &PruneSchedule, opts: &BenchOptions) -> Result<BenchResult> {
    let dense_ips = measure_ips(model, &PruneSchedule::dense(), opts)?;
    let pruned_ips = measure_ips(model, schedule, opts)?;
    Ok(BenchResult {
        dense_ips,
        pruned_ips,
        ratio: pruned_ips / dense_ips,
    })
}

/// Dense throughput measured once, then one row per keep rate.
pub fn benchmark_rates(
    model: &Model,
    base: &PruneSchedule,
    keep_rates: &[f64],
    opts: &BenchOptions,
) -> Result<(f64, Vec<BenchRateRow>)> {
    let dense_ips = measure_ips(model, &PruneSchedule::dense(), opts)?;
    let mut rows = Vec::with_capacity(keep_rates.len());
    for &r in keep_rates {
        let schedule = PruneSchedule {
            keep_rate: r,
            ..base.clone()
        };
        let ips = measure_ips(model, &schedule, opts)?;
        rows.push(BenchRateRow {
            keep_rate: r,
            images_per_sec: ips,
            ratio_vs_dense: ips / dense_ips,
        });
    }
    Ok((dense_ips, rows))
}

pub fn render_table(dense_ips: f64, rows: &[BenchRateRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>14} {:>10}\n",
        "keep_rate", "images/sec", "ratio"
    ));
    out.push_str(&format!("{:<10} {:>14.4} {:>10.3}\n", "dense", dense_ips, 1.0));
    for row in rows {
        out.push_str(&format!(
            "{:<10} {:>14.4} {:>10.3}\n",
            row.keep_rate, row.images_per_sec, row.ratio_vs_dense
        ));
    }
    out
}
