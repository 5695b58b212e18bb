//! Analytic FLOPs model for dense and pruned schedules.
//!
//! Convention: one fused multiply-add counts as ONE floating-point operation
//! (the convention of common profilers; conventions counting separate
//! multiply and add are exactly 2x larger). Layer norms, softmaxes, GELUs and
//! bias adds are excluded as sub-1% contributors.
//!
//! Per block at n tokens, embed dim d, FFN hidden width 4d:
//!
//! ```text
//! QKV + output projections   4 n d^2
//! scores + value matmuls     2 n^2 d
//! FFN                        8 n d^2
//! total                      12 n d^2 + 2 n^2 d
//! ```
//!
//! Two totals are reported for pruned schedules. The `post_block` count
//! matches this engine, which prunes after a block completes. The `mid_block`
//! count models the EViT-style protocol where selection happens between the
//! attention and FFN sublayers of a pruning block, so that block's FFN
//! already runs at the reduced width. The difference is a few percent and
//! explains reduction figures quoted under either protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::prune::{keep_count, PruneSchedule};

/// FLOPs of one transformer block at `n` tokens (fused multiply-add = 1).
pub fn block_flops(n_tokens: usize, embed_dim: usize, ffn_ratio: f64) -> u64 {
    attn_flops(n_tokens, embed_dim) + ffn_flops(n_tokens, embed_dim, ffn_ratio)
}

fn attn_flops(n: usize, d: usize) -> u64 {
    let (n, d) = (n as u64, d as u64);
    4 * n * d * d + 2 * n * n * d
}

fn ffn_flops(n: usize, d: usize, ratio: f64) -> u64 {
    let hidden = (ratio * d as f64).round() as u64;
    2 * n as u64 * d as u64 * hidden
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCost {
    /// 1-indexed block.
    pub block: usize,
    /// Tokens active while the block runs.
    pub tokens: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlopsReport {
    pub embed_flops: u64,
    pub head_flops: u64,
    pub blocks: Vec<BlockCost>,
    /// Total under the post-block pruning convention (this engine).
    pub total: u64,
    /// Total under the mid-block (pre-FFN selection) convention.
    pub mid_block_total: u64,
    /// Dense (r = 1) total for the same geometry.
    pub dense_total: u64,
    /// 1 - total / dense_total.
    pub reduction: f64,
    /// 1 - mid_block_total / dense_total.
    pub mid_block_reduction: f64,
}

/// Sum the cost model over the token trajectory implied by the schedule.
pub fn model_flops(config: &ModelConfig, schedule: &PruneSchedule) -> Result<FlopsReport> {
    config.validate()?;
    schedule.validate(config)?;
    let d = config.embed_dim;
    let ratio = config.ffn_ratio;

    let embed_flops = (config.num_patches() * d * config.patch_len()) as u64;
    let head_flops = (d * config.num_classes) as u64;

    let mut blocks = Vec::with_capacity(config.depth);
    let mut total = embed_flops + head_flops;
    let mut mid_total = embed_flops + head_flops;
    let mut patches = config.num_patches();
    for b in 1..=config.depth {
        let n = patches + 1;
        let flops = block_flops(n, d, ratio);
        blocks.push(BlockCost {
            block: b,
            tokens: n,
            flops,
        });
        total += flops;
        if schedule.blocks.contains(&b) {
            patches = keep_count(patches, schedule.keep_rate);
            // mid-block convention: this block's FFN already sees the
            // reduced token count
            mid_total += attn_flops(n, d) + ffn_flops(patches + 1, d, ratio);
        } else {
            mid_total += flops;
        }
    }

    let dense_total = embed_flops
        + head_flops
        + config.depth as u64 * block_flops(config.num_tokens(), d, ratio);
    if total > dense_total {
        return Err(Error::Config("pruned trajectory exceeds dense cost".into()));
    }
    Ok(FlopsReport {
        embed_flops,
        head_flops,
        blocks,
        total,
        mid_block_total: mid_total,
        dense_total,
        reduction: 1.0 - total as f64 / dense_total as f64,
        mid_block_reduction: 1.0 - mid_total as f64 / dense_total as f64,
    })
}

impl FlopsReport {
    /// Fixed-width text rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<8} {:>8} {:>16}\n", "block", "tokens", "flops"));
        out.push_str(&format!(
            "{:<8} {:>8} {:>16}\n",
            "embed",
            "-",
            self.embed_flops
        ));
        for b in &self.blocks {
            out.push_str(&format!("{:<8} {:>8} {:>16}\n", b.block, b.tokens, b.flops));
        }
        out.push_str(&format!("{:<8} {:>8} {:>16}\n", "head", "-", self.head_flops));
        out.push_str(&format!(
            "total      {:>14.4} GFLOPs ({:.2}% below dense)\n",
            self.total as f64 / 1e9,
            self.reduction * 100.0
        ));
        out.push_str(&format!(
            "mid-block  {:>14.4} GFLOPs ({:.2}% below dense)\n",
            self.mid_block_total as f64 / 1e9,
            self.mid_block_reduction * 100.0
        ));
        out.push_str(&format!(
            "dense      {:>14.4} GFLOPs\n",
            self.dense_total as f64 / 1e9
        ));
        out
    }
}
