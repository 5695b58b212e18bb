//! Patch importance scoring from attention distributions.
//!
//! For a query patch, its attention row restricted to patch keys (class
//! column dropped) and renormalized is the patch attention distribution —
//! mathematically identical to softmaxing the patch logits alone. Shannon
//! entropy of that distribution measures how diffuse the patch's attention
//! is; Rényi entropy of order alpha sharpens (alpha > 1) or flattens
//! (alpha < 1) the emphasis on attention peaks. Low entropy means selective,
//! concentrated attention, which is the signal for keeping a patch.
//!
//! Entropy sums are accumulated over values sorted ascending, so scores are
//! exactly invariant under permutation of the distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttentionTensor;

/// Mass below which a restricted attention row is considered degenerate
/// rather than silently renormalized.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Patch importance criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Shannon attention entropy; lower is more important.
    Shannon,
    /// Rényi attention entropy of order `alpha`; lower is more important.
    Renyi { alpha: f64 },
    /// Head-averaged class-token attention magnitude; higher is more important.
    Evit,
    /// Seeded uniform random selection (control baseline).
    Random { seed: u64 },
}

impl Criterion {
    pub fn validate(&self) -> Result<()> {
        if let Criterion::Renyi { alpha } = *self {
            if alpha <= 0.0 || alpha == 1.0 || !alpha.is_finite() {
                return Err(Error::InvalidOrder(alpha));
            }
        }
        Ok(())
    }

    /// True when larger scores mean more important (EViT); entropy and
    /// random-key criteria keep the smallest scores.
    pub fn keep_highest(&self) -> bool {
        matches!(self, Criterion::Evit)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Shannon => "shannon",
            Criterion::Renyi { .. } => "renyi",
            Criterion::Evit => "evit",
            Criterion::Random { .. } => "random",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Criterion::Renyi { alpha } => Some(*alpha),
            _ => None,
        }
    }
}

/// A probability distribution over patch keys.
#[derive(Debug, Clone)]
pub struct PatchDistribution(Vec<f64>);

impl PatchDistribution {
    /// Validates: entries nonnegative, total within 1e-10 of 1.
    pub fn new(probs: Vec<f64>) -> Result<PatchDistribution> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("empty distribution".into()));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::NonFinite("patch distribution"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Shape(format!(
                "distribution sums to {total}, expected 1"
            )));
        }
        Ok(PatchDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-patch importance scores for one block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyScores {
    /// One score per surviving patch, aligned with the token matrix's
    /// patch columns.
    pub values: Vec<f64>,
    pub criterion: Criterion,
    /// 1-indexed block the scores were computed in.
    pub block: usize,
    /// Selection polarity; mirrors `criterion.keep_highest()`.
    pub keep_highest: bool,
}

/// Attention row of `query_patch` (0-based among patches) in `head`,
/// restricted to patch keys and renormalized.
///
/// `include_class` keeps the class column in the distribution instead, an
/// ablation toggle; the distribution then has length n rather than n-1.
pub fn patch_attention_distribution(
    attn: &AttentionTensor,
    head: usize,
    query_patch: usize,
    include_class: bool,
) -> Result<PatchDistribution> {
    let n = attn.len();
    if head >= attn.num_heads() {
        return Err(Error::Shape(format!(
            "head {head} out of {}",
            attn.num_heads()
        )));
    }
    if query_patch + 1 >= n {
        return Err(Error::Shape(format!(
            "query patch {query_patch} out of {} patches",
            n.saturating_sub(1)
        )));
    }
    let row = attn.heads[head].row(query_patch + 1);
    let slice: &[f64] = if include_class { row } else { &row[1..] };
    let mass: f64 = slice.iter().sum();
    if mass < DEGENERATE_MASS {
        return Err(Error::DegenerateDistribution {
            block: None,
            head,
            patch: query_patch,
        });
    }
    PatchDistribution::new(slice.iter().map(|&p| p / mass).collect())
}

// Sum f(v) over values in ascending order: deterministic under permutation.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut terms: Vec<f64> = values.collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Shannon entropy in nats, with the 0·log 0 = 0 convention.
pub fn shannon_entropy(dist: &PatchDistribution) -> f64 {
    sorted_sum(
        dist.probs()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln()),
    )
}

/// Rényi entropy of order `alpha` in nats:
/// `log(sum_j p_j^alpha) / (1 - alpha)`, evaluated as a log-sum-exp over
/// `alpha * ln p_j` with zero entries excluded, so extreme orders stay finite.
pub fn renyi_entropy(dist: &PatchDistribution, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 || alpha == 1.0 || !alpha.is_finite() {
        return Err(Error::InvalidOrder(alpha));
    }
    let logs: Vec<f64> = dist
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| alpha * p.ln())
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum = sorted_sum(logs.iter().map(|&l| (l - max).exp()));
    Ok((max + sum.ln()) / (1.0 - alpha))
}

fn entropy_by(dist: &PatchDistribution, criterion: &Criterion) -> Result<f64> {
    match criterion {
        Criterion::Shannon => Ok(shannon_entropy(dist)),
        Criterion::Renyi { alpha } => renyi_entropy(dist, *alpha),
        other => Err(Error::Config(format!(
            "criterion '{}' is not an entropy",
            other.name()
        ))),
    }
}

/// Per-patch scores for one block: entropy per head, arithmetic mean across
/// heads. EViT and random criteria delegate to their own scorers.
///
/// Averaging happens over per-head entropies, not over head-averaged
/// attention; Jensen's inequality makes these genuinely different.
pub fn head_averaged_scores(
    attn: &AttentionTensor,
    criterion: &Criterion,
    block: usize,
    include_class: bool,
) -> Result<EntropyScores> {
    criterion.validate()?;
    let n = attn.len();
    if n < 2 {
        return Err(Error::EmptyInput("no patch tokens to score".into()));
    }
    match criterion {
        Criterion::Evit => {
            let mut s = evit_cls_score(attn)?;
            s.block = block;
            Ok(s)
        }
        Criterion::Random { seed } => Ok(random_scores(n - 1, *seed, block)),
        _ => {
            let h = attn.num_heads() as f64;
            let mut values = Vec::with_capacity(n - 1);
            for patch in 0..n - 1 {
                let mut acc = 0.0;
                for head in 0..attn.num_heads() {
                    let dist = patch_attention_distribution(attn, head, patch, include_class)
                        .map_err(|e| match e {
                            Error::DegenerateDistribution { head, patch, .. } => {
                                Error::DegenerateDistribution {
                                    block: Some(block),
                                    head,
                                    patch,
                                }
                            }
                            other => other,
                        })?;
                    acc += entropy_by(&dist, criterion)?;
                }
                values.push(acc / h);
            }
            Ok(EntropyScores {
                values,
                criterion: *criterion,
                block,
                keep_highest: false,
            })
        }
    }
}

/// EViT-style baseline: mean over heads of the class-token query row's
/// attention to each patch. Higher means more important.
pub fn evit_cls_score(attn: &AttentionTensor) -> Result<EntropyScores> {
    let n = attn.len();
    if n < 2 {
        return Err(Error::EmptyInput("no patch tokens to score".into()));
    }
    let h = attn.num_heads() as f64;
    let mut values = vec![0.0; n - 1];
    for head in &attn.heads {
        let cls_row = head.row(0);
        for (v, &a) in values.iter_mut().zip(&cls_row[1..]) {
            *v += a;
        }
    }
    for v in &mut values {
        *v /= h;
    }
    Ok(EntropyScores {
        values,
        criterion: Criterion::Evit,
        block: 0,
        keep_highest: true,
    })
}

/// Seeded pseudo-scores for the random baseline: iid uniform keys, one per
/// patch. Keeping the lowest k keys selects a uniformly random k-subset.
/// The per-block seed is derived so different pruning blocks draw
/// independent selections from one user-facing seed.
pub fn random_scores(num_patches: usize, seed: u64, block: usize) -> EntropyScores {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        seed ^ (block as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    EntropyScores {
        values: (0..num_patches).map(|_| rng.gen::<f64>()).collect(),
        criterion: Criterion::Random { seed },
        block,
        keep_highest: false,
    }
}

/// Attention-weighted mean query→key distance in pixels, per head, averaged
/// over query patches. Distances come from patch grid coordinates times the
/// patch size; attention weights are the patch attention distributions.
/// A receptive-field proxy: small values mean local attention.
pub fn attention_distance(
    attn: &AttentionTensor,
    grid_width: usize,
    patch_size: usize,
    patch_ids: &[usize],
) -> Result<Vec<f64>> {
    let n = attn.len();
    if n < 2 {
        return Err(Error::EmptyInput("no patch tokens".into()));
    }
    if patch_ids.len() != n - 1 {
        return Err(Error::Shape(format!(
            "{} patch ids for attention over {} patches",
            patch_ids.len(),
            n - 1
        )));
    }
    let coord = |id: usize| -> (f64, f64) { ((id / grid_width) as f64, (id % grid_width) as f64) };
    let mut out = Vec::with_capacity(attn.num_heads());
    for head in 0..attn.num_heads() {
        let mut total = 0.0;
        for (q, &qid) in patch_ids.iter().enumerate() {
            let dist = patch_attention_distribution(attn, head, q, false)?;
            let (qy, qx) = coord(qid);
            let mut expected = 0.0;
            for (p, &kid) in dist.probs().iter().zip(patch_ids) {
                let (ky, kx) = coord(kid);
                expected += p * ((qy - ky).powi(2) + (qx - kx).powi(2)).sqrt();
            }
            total += expected * patch_size as f64;
        }
        out.push(total / (n - 1) as f64);
    }
    Ok(out)
}
