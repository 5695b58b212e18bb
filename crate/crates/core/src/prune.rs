//! Layerwise token pruning: score patches after selected blocks, keep the
//! top-r fraction by importance, propagate only the kept tokens.
//!
//! Block positions are 1-indexed and pruning happens after the full block
//! (MHSA + FFN) completes, using that block's own attention for scoring. The
//! class token is never pruned. Keep counts are `ceil(r * m)` over the m
//! surviving patches, so the token count after a pruning event is
//! `ceil(r * m) + 1`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::entropy::{self, Criterion, EntropyScores};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::{AttentionTensor, Model, ModelConfig, TokenMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneSchedule {
    /// 1-indexed blocks after which pruning occurs.
    pub blocks: BTreeSet<usize>,
    /// Fraction of surviving patches kept at each pruning event, in (0, 1].
    pub keep_rate: f64,
    pub criterion: Criterion,
    /// Ablation toggle: score with the class column kept in the distribution.
    #[serde(default)]
    pub include_class: bool,
}

impl PruneSchedule {
    /// Standard schedule: prune after blocks 4, 7 and 10.
    pub fn new(keep_rate: f64, criterion: Criterion) -> PruneSchedule {
        PruneSchedule {
            blocks: [4, 7, 10].into_iter().collect(),
            keep_rate,
            criterion,
            include_class: false,
        }
    }

    /// No-op schedule: dense forward.
    pub fn dense() -> PruneSchedule {
        PruneSchedule {
            blocks: BTreeSet::new(),
            keep_rate: 1.0,
            criterion: Criterion::Shannon,
            include_class: false,
        }
    }

    pub fn with_blocks(mut self, blocks: impl IntoIterator<Item = usize>) -> PruneSchedule {
        self.blocks = blocks.into_iter().collect();
        self
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return Err(Error::Config(format!(
                "keep rate {} outside (0, 1]",
                self.keep_rate
            )));
        }
        self.criterion.validate()?;
        for &b in &self.blocks {
            if b == 0 || b > config.depth {
                return Err(Error::Config(format!(
                    "pruning block {} outside 1..={}",
                    b, config.depth
                )));
            }
        }
        Ok(())
    }

    /// True when the schedule cannot change the token stream.
    pub fn is_noop(&self) -> bool {
        self.blocks.is_empty() || self.keep_rate >= 1.0
    }
}

/// One pruning event, as recorded in the trace. Patch ids are original
/// (dense-grid) indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneEvent {
    pub block: usize,
    pub criterion: String,
    pub alpha: Option<f64>,
    pub kept_ids: Vec<usize>,
    pub dropped_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub tokens_before: usize,
    pub tokens_after: usize,
}

/// Record of every pruning event in one forward pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneTrace {
    pub initial_tokens: usize,
    pub final_tokens: usize,
    pub events: Vec<PruneEvent>,
}

impl PruneTrace {
    /// Token counts: initial, then after each pruning event.
    pub fn token_counts(&self) -> Vec<usize> {
        let mut counts = vec![self.initial_tokens];
        counts.extend(self.events.iter().map(|e| e.tokens_after));
        counts
    }
}

/// Number of patches kept by rate `r` out of `m`: `ceil(r * m)`, computed
/// with a small epsilon so binary rounding of `r * m` cannot bump an exact
/// integer product up to the next one.
pub fn keep_count(m: usize, r: f64) -> usize {
    (((r * m as f64) - 1e-9).ceil() as usize).clamp(1, m)
}

/// Split patch positions `0..m` into (kept, dropped) by score. Entropy and
/// random criteria keep the k lowest scores, EViT keeps the k highest; ties
/// break toward the smaller position. Both outputs are sorted ascending.
pub fn select_keep(scores: &EntropyScores, keep_rate: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = scores.values.len();
    if m == 0 {
        return Err(Error::EmptyInput("no scores to select from".into()));
    }
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::Config(format!(
            "keep rate {} outside (0, 1]",
            keep_rate
        )));
    }
    let k = keep_count(m, keep_rate);
    let mut order: Vec<usize> = (0..m).collect();
    if scores.keep_highest {
        order.sort_by(|&a, &b| {
            scores.values[b]
                .total_cmp(&scores.values[a])
                .then(a.cmp(&b))
        });
    } else {
        order.sort_by(|&a, &b| {
            scores.values[a]
                .total_cmp(&scores.values[b])
                .then(a.cmp(&b))
        });
    }
    let mut kept: Vec<usize> = order[..k].to_vec();
    let mut dropped: Vec<usize> = order[k..].to_vec();
    kept.sort_unstable();
    dropped.sort_unstable();
    Ok((kept, dropped))
}

/// Copy the class token and the selected patch columns into a new token
/// matrix. `kept` holds patch positions (0-based among current patches),
/// strictly increasing.
pub fn gather_tokens(x: &TokenMatrix, kept: &[usize]) -> Result<TokenMatrix> {
    if !kept.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Shape("kept indices must be strictly increasing".into()));
    }
    if let Some(&last) = kept.last() {
        if last >= x.num_patches() {
            return Err(Error::Shape(format!(
                "kept index {} out of {} patches",
                last,
                x.num_patches()
            )));
        }
    }
    let mut cols = Vec::with_capacity(kept.len() + 1);
    cols.push(0);
    cols.extend(kept.iter().map(|&p| p + 1));
    let data = x.data.select_cols(&cols)?;
    let patch_ids = kept.iter().map(|&p| x.patch_ids[p]).collect();
    TokenMatrix::new(data, patch_ids)
}

/// Uniformly random kept set of size `ceil(r * m)`, reproducible from the
/// seed. Implemented as lowest-k over iid uniform keys, the same draw the
/// random criterion uses inside the forward pass.
pub fn random_prune_baseline(m: usize, keep_rate: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let scores = entropy::random_scores(m, seed, 0);
    select_keep(&scores, keep_rate)
}

/// Attention tensor plus bookkeeping captured at a requested block.
#[derive(Debug, Clone)]
pub struct CapturedBlock {
    /// 1-indexed block the attention came from.
    pub block: usize,
    pub attn: AttentionTensor,
    /// Patch ids of the tokens that entered the block.
    pub patch_ids: Vec<usize>,
}

/// Output of a (possibly pruning) forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub probs: Vec<f64>,
    pub trace: PruneTrace,
    pub captured: Option<CapturedBlock>,
}

/// Run the full forward pass under a schedule. After each block listed in
/// the schedule, patches are scored from that block's own attention,
/// selected, and gathered. `capture_block` optionally keeps one block's
/// attention tensor for analysis (heatmaps, attention distance).
pub fn run_forward(
    model: &Model,
    image: &ImageTensor,
    schedule: &PruneSchedule,
    capture_block: Option<usize>,
) -> Result<ForwardRun> {
    schedule.validate(&model.config)?;
    if let Some(b) = capture_block {
        if b == 0 || b > model.config.depth {
            return Err(Error::Config(format!(
                "capture block {} outside 1..={}",
                b, model.config.depth
            )));
        }
    }
    let mut x = model.embed(image)?;
    let mut trace = PruneTrace {
        initial_tokens: x.len(),
        final_tokens: x.len(),
        events: Vec::new(),
    };
    let mut captured = None;

    for block in 1..=model.config.depth {
        let (next, attn) = model.block_forward(&x, block - 1)?;
        if capture_block == Some(block) {
            captured = Some(CapturedBlock {
                block,
                attn: attn.clone(),
                patch_ids: x.patch_ids.clone(),
            });
        }
        x = next;
        if schedule.blocks.contains(&block) {
            let scores = entropy::head_averaged_scores(
                &attn,
                &schedule.criterion,
                block,
                schedule.include_class,
            )?;
            let (kept, dropped) = select_keep(&scores, schedule.keep_rate)?;
            let before = x.len();
            let event = PruneEvent {
                block,
                criterion: schedule.criterion.name().to_string(),
                alpha: schedule.criterion.alpha(),
                kept_ids: kept.iter().map(|&p| x.patch_ids[p]).collect(),
                dropped_ids: dropped.iter().map(|&p| x.patch_ids[p]).collect(),
                scores: scores.values.clone(),
                tokens_before: before,
                tokens_after: kept.len() + 1,
            };
            x = gather_tokens(&x, &kept)?;
            debug_assert_eq!(x.len(), event.tokens_after);
            trace.events.push(event);
        }
    }
    trace.final_tokens = x.len();
    let probs = model.classify(&x)?;
    Ok(ForwardRun {
        probs,
        trace,
        captured,
    })
}

/// Pruned forward pass: class probabilities plus the pruning trace.
pub fn pruned_forward(
    model: &Model,
    image: &ImageTensor,
    schedule: &PruneSchedule,
) -> Result<(Vec<f64>, PruneTrace)> {
    let run = run_forward(model, image, schedule, None)?;
    Ok((run.probs, run.trace))
}

/// Dense forward pass (no pruning).
pub fn dense_forward(model: &Model, image: &ImageTensor) -> Result<Vec<f64>> {
    let run = run_forward(model, image, &PruneSchedule::dense(), None)?;
    Ok(run.probs)
}
