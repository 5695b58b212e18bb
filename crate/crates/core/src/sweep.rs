//! Criterion × keep-rate comparison grids.
//!
//! For every (criterion, rate) cell the sweep reports the analytic FLOPs and
//! reduction, the fraction of images whose pruned argmax matches the dense
//! model (the desk-scale accuracy proxy), and the mean kept-set overlap
//! against the first criterion in the list at the same rate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::entropy::Criterion;
use crate::error::Result;
use crate::flops;
use crate::image::ImageTensor;
use crate::model::Model;
use crate::parallel;
use crate::prune::{self, PruneSchedule, PruneTrace};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub keep_rates: Vec<f64>,
    pub criteria: Vec<Criterion>,
    pub blocks: BTreeSet<usize>,
    pub include_class: bool,
    pub threads: usize,
}

impl SweepOptions {
    /// The default grid: r from 0.9 down to 0.3, Shannon plus Rényi orders
    /// {2, 5, 10} (Shannon standing in for order 1).
    pub fn default_grid() -> SweepOptions {
        SweepOptions {
            keep_rates: vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3],
            criteria: vec![
                Criterion::Shannon,
                Criterion::Renyi { alpha: 2.0 },
                Criterion::Renyi { alpha: 5.0 },
                Criterion::Renyi { alpha: 10.0 },
            ],
            blocks: [4, 7, 10].into_iter().collect(),
            include_class: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub criterion: String,
    pub alpha: Option<f64>,
    pub keep_rate: f64,
    pub total_flops: u64,
    pub reduction: f64,
    /// Fraction of images whose argmax matches the dense model; absent when
    /// the sweep ran without images.
    pub agreement: Option<f64>,
    /// Mean kept-set overlap with the first criterion at the same rate.
    pub overlap_vs_first: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn kept_sets(trace: &PruneTrace) -> Vec<BTreeSet<usize>> {
    trace
        .events
        .iter()
        .map(|e| e.kept_ids.iter().copied().collect())
        .collect()
}

fn mean_overlap(a: &[Vec<BTreeSet<usize>>], b: &[Vec<BTreeSet<usize>>]) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ia, ib) in a.iter().zip(b) {
        for (sa, sb) in ia.iter().zip(ib) {
            if sa.is_empty() {
                continue;
            }
            total += sa.intersection(sb).count() as f64 / sa.len() as f64;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Run the grid over the given images (which may be empty: analytic columns
/// are still produced, agreement and overlap stay empty).
pub fn sweep(model: &Model, images: &[ImageTensor], opts: &SweepOptions) -> Result<SweepReport> {
    let dense_argmax: Vec<usize> = parallel::map_ordered(
        images.iter().collect(),
        opts.threads,
        |img| prune::dense_forward(model, img).map(|p| argmax(&p)),
    )
    .into_iter()
    .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &rate in &opts.keep_rates {
        let mut first_sets: Option<Vec<Vec<BTreeSet<usize>>>> = None;
        for (ci, criterion) in opts.criteria.iter().enumerate() {
            let schedule = PruneSchedule {
                blocks: opts.blocks.clone(),
                keep_rate: rate,
                criterion: *criterion,
                include_class: opts.include_class,
            };
            let report = flops::model_flops(&model.config, &schedule)?;

            let outcomes: Vec<(usize, Vec<BTreeSet<usize>>)> = parallel::map_ordered(
                images.iter().collect(),
                opts.threads,
                |img| {
                    prune::pruned_forward(model, img, &schedule)
                        .map(|(probs, trace)| (argmax(&probs), kept_sets(&trace)))
                },
            )
            .into_iter()
            .collect::<Result<_>>()?;

            let agreement = (!images.is_empty()).then(|| {
                let matches = outcomes
                    .iter()
                    .zip(&dense_argmax)
                    .filter(|((got, _), want)| got == *want)
                    .count();
                matches as f64 / images.len() as f64
            });

            let sets: Vec<Vec<BTreeSet<usize>>> =
                outcomes.into_iter().map(|(_, s)| s).collect();
            let overlap = match (&first_sets, ci) {
                (_, 0) => {
                    let self_overlap = mean_overlap(&sets, &sets);
                    first_sets = Some(sets);
                    self_overlap
                }
                (Some(first), _) => mean_overlap(&sets, first),
                (None, _) => None,
            };

            rows.push(SweepRow {
                criterion: criterion.name().to_string(),
                alpha: criterion.alpha(),
                keep_rate: rate,
                total_flops: report.total,
                reduction: report.reduction,
                agreement,
                overlap_vs_first: overlap,
            });
        }
    }
    Ok(SweepReport { rows })
}

pub fn render_table(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<9} {:>6} {:>6} {:>10} {:>10} {:>10} {:>9}\n",
        "criterion", "alpha", "r", "GFLOPs", "reduction", "agreement", "overlap"
    ));
    for row in &report.rows {
        let alpha = row.alpha.map_or("-".to_string(), |a| format!("{a}"));
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        out.push_str(&format!(
            "{:<9} {:>6} {:>6} {:>10.4} {:>9.2}% {:>10} {:>9}\n",
            row.criterion,
            alpha,
            row.keep_rate,
            row.total_flops as f64 / 1e9,
            row.reduction * 100.0,
            fmt_opt(row.agreement),
            fmt_opt(row.overlap_vs_first),
        ));
    }
    out
}
