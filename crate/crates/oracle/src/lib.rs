//! Brute-force reference implementations for the test suite.
//!
//! Everything here is a literal scalar-loop transcription of the forward
//! pass and the entropy definitions, sharing no kernel code with the engine:
//! no `linalg` calls, no shared softmax/entropy helpers. (Only weight-archive
//! IO, config types, and libm's `erf` primitive are reused.) Agreement
//! between this crate and the engine is therefore evidence, not tautology.
//!
//! Tokens are plain `Vec<Vec<f64>>`, one embedding vector per token, class
//! token first. Intended for toy geometries only; nothing here is fast.

// Index loops are deliberate here: this crate transcribes the math verbatim.
#![allow(clippy::needless_range_loop)]

use entroprune_core::image::ImageTensor;
use entroprune_core::model::{ModelConfig, LAYER_NORM_EPS};
use entroprune_core::synth;
use entroprune_core::weights::WeightArchive;
use entroprune_core::Result;

pub type Tokens = Vec<Vec<f64>>;

/// Small seeded geometry plus matching random weights, the shared test
/// vocabulary for engine-vs-oracle comparisons.
#[derive(Debug, Clone)]
pub struct ToyModelSpec {
    pub config: ModelConfig,
    pub seed: u64,
}

impl ToyModelSpec {
    /// Sample a toy geometry from a seed (depth <= 4, d <= 8, heads <= 2,
    /// tokens <= 10) together with its archive.
    pub fn generate(seed: u64) -> (ToyModelSpec, WeightArchive) {
        let (config, archive) = synth::random_toy(seed);
        (ToyModelSpec { config, seed }, archive)
    }
}

fn tensor(archive: &WeightArchive, name: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let m = archive.get_tensor(name, &[rows, cols])?;
    Ok((0..rows).map(|i| m.row(i).to_vec()).collect())
}

fn layer_norm_token(token: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let d = token.len() as f64;
    let mut mean = 0.0;
    for &v in token {
        mean += v;
    }
    mean /= d;
    let mut var = 0.0;
    for &v in token {
        var += (v - mean) * (v - mean);
    }
    var /= d;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    token
        .iter()
        .enumerate()
        .map(|(i, &v)| gamma[i] * (v - mean) * inv + beta[i])
        .collect()
}

fn affine(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len());
    for (row, &bias) in w.iter().zip(b) {
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out.push(acc + bias);
    }
    out
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if l > max {
            max = l;
        }
    }
    let mut exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let mut z = 0.0;
    for &e in &exps {
        z += e;
    }
    for e in &mut exps {
        *e /= z;
    }
    exps
}

/// Patchify + linear projection + class token + positional embeddings,
/// rebuilt with scalar loops.
pub fn naive_embed(archive: &WeightArchive, config: &ModelConfig, image: &ImageTensor) -> Result<Tokens> {
    let d = config.embed_dim;
    let p = config.patch_size;
    let grid = config.grid_side();
    let patch_w = tensor(archive, "patch_embed.weight", d, config.patch_len())?;
    let patch_b = archive.get_vector("patch_embed.bias", d)?;
    let pos = tensor(archive, "pos_embed", config.num_tokens(), d)?;
    let cls = archive.get_vector("cls_token", d)?;

    let mut tokens = Vec::with_capacity(config.num_tokens());
    let cls_col: Vec<f64> = cls.iter().zip(&pos[0]).map(|(a, b)| a + b).collect();
    tokens.push(cls_col);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut patch = Vec::with_capacity(config.patch_len());
            for c in 0..config.channels {
                for py in 0..p {
                    for px in 0..p {
                        patch.push(image.get(gy * p + py, gx * p + px, c));
                    }
                }
            }
            let idx = gy * grid + gx;
            let mut col = affine(&patch_w, &patch_b, &patch);
            for (v, pe) in col.iter_mut().zip(&pos[idx + 1]) {
                *v += pe;
            }
            tokens.push(col);
        }
    }
    Ok(tokens)
}

struct NaiveBlock {
    wq: Vec<Vec<f64>>,
    bq: Vec<f64>,
    wk: Vec<Vec<f64>>,
    bk: Vec<f64>,
    wv: Vec<Vec<f64>>,
    bv: Vec<f64>,
    wo: Vec<Vec<f64>>,
    bo: Vec<f64>,
    ln1_g: Vec<f64>,
    ln1_b: Vec<f64>,
    ln2_g: Vec<f64>,
    ln2_b: Vec<f64>,
    fc1_w: Vec<Vec<f64>>,
    fc1_b: Vec<f64>,
    fc2_w: Vec<Vec<f64>>,
    fc2_b: Vec<f64>,
}

fn load_block(archive: &WeightArchive, config: &ModelConfig, index: usize) -> Result<NaiveBlock> {
    let d = config.embed_dim;
    let hidden = config.ffn_hidden();
    let t = |s: &str| format!("blocks.{index}.{s}");
    Ok(NaiveBlock {
        wq: tensor(archive, &t("attn.wq.weight"), d, d)?,
        bq: archive.get_vector(&t("attn.wq.bias"), d)?,
        wk: tensor(archive, &t("attn.wk.weight"), d, d)?,
        bk: archive.get_vector(&t("attn.wk.bias"), d)?,
        wv: tensor(archive, &t("attn.wv.weight"), d, d)?,
        bv: archive.get_vector(&t("attn.wv.bias"), d)?,
        wo: tensor(archive, &t("attn.wo.weight"), d, d)?,
        bo: archive.get_vector(&t("attn.wo.bias"), d)?,
        ln1_g: archive.get_vector(&t("ln1.gamma"), d)?,
        ln1_b: archive.get_vector(&t("ln1.beta"), d)?,
        ln2_g: archive.get_vector(&t("ln2.gamma"), d)?,
        ln2_b: archive.get_vector(&t("ln2.beta"), d)?,
        fc1_w: tensor(archive, &t("ffn.fc1.weight"), hidden, d)?,
        fc1_b: archive.get_vector(&t("ffn.fc1.bias"), hidden)?,
        fc2_w: tensor(archive, &t("ffn.fc2.weight"), d, hidden)?,
        fc2_b: archive.get_vector(&t("ffn.fc2.bias"), d)?,
    })
}

/// One pre-norm block, scalar everywhere: LN1, per-head attention, value
/// mixing, output projection, residual, LN2, GELU FFN, residual.
pub fn naive_block_forward(
    archive: &WeightArchive,
    config: &ModelConfig,
    index: usize,
    tokens: &Tokens,
) -> Result<Tokens> {
    let block = load_block(archive, config, index)?;
    let n = tokens.len();
    let h = config.heads;
    let dh = config.head_dim;

    let normed: Tokens = tokens
        .iter()
        .map(|t| layer_norm_token(t, &block.ln1_g, &block.ln1_b))
        .collect();
    let q: Tokens = normed.iter().map(|t| affine(&block.wq, &block.bq, t)).collect();
    let k: Tokens = normed.iter().map(|t| affine(&block.wk, &block.bk, t)).collect();
    let v: Tokens = normed.iter().map(|t| affine(&block.wv, &block.bv, t)).collect();

    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed: Tokens = vec![vec![0.0; config.embed_dim]; n];
    for head in 0..h {
        let lo = head * dh;
        for i in 0..n {
            let mut logits = Vec::with_capacity(n);
            for j in 0..n {
                let mut dot = 0.0;
                for r in 0..dh {
                    dot += q[i][lo + r] * k[j][lo + r];
                }
                logits.push(dot * scale);
            }
            let attn = softmax(&logits);
            for r in 0..dh {
                let mut acc = 0.0;
                for (j, &a) in attn.iter().enumerate() {
                    acc += a * v[j][lo + r];
                }
                mixed[i][lo + r] = acc;
            }
        }
    }

    let mut after_attn: Tokens = Vec::with_capacity(n);
    for (t, ctx) in tokens.iter().zip(&mixed) {
        let proj = affine(&block.wo, &block.bo, ctx);
        after_attn.push(t.iter().zip(&proj).map(|(a, b)| a + b).collect());
    }

    let mut out = Vec::with_capacity(n);
    for t in &after_attn {
        let f = layer_norm_token(t, &block.ln2_g, &block.ln2_b);
        let hid = affine(&block.fc1_w, &block.fc1_b, &f);
        let act: Vec<f64> = hid
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
            .collect();
        let ffn = affine(&block.fc2_w, &block.fc2_b, &act);
        out.push(t.iter().zip(&ffn).map(|(a, b)| a + b).collect());
    }
    Ok(out)
}

/// Final layer norm on the class token, linear head, softmax.
pub fn naive_classify(archive: &WeightArchive, config: &ModelConfig, tokens: &Tokens) -> Result<Vec<f64>> {
    let d = config.embed_dim;
    let gamma = archive.get_vector("norm.gamma", d)?;
    let beta = archive.get_vector("norm.beta", d)?;
    let head_w = tensor(archive, "head.weight", config.num_classes, d)?;
    let head_b = archive.get_vector("head.bias", config.num_classes)?;
    let cls = layer_norm_token(&tokens[0], &gamma, &beta);
    Ok(softmax(&affine(&head_w, &head_b, &cls)))
}

/// Full dense forward pass with scalar loops.
pub fn naive_forward(archive: &WeightArchive, config: &ModelConfig, image: &ImageTensor) -> Result<Vec<f64>> {
    let mut tokens = naive_embed(archive, config, image)?;
    for b in 0..config.depth {
        tokens = naive_block_forward(archive, config, b, &tokens)?;
    }
    naive_classify(archive, config, &tokens)
}

/// Keep the class token plus the listed patch positions (0-based among the
/// current patches), then run the remaining blocks densely on that subset.
/// `remaining_blocks` are 0-based block indices.
pub fn dense_on_subset(
    archive: &WeightArchive,
    config: &ModelConfig,
    tokens: &Tokens,
    kept_patches: &[usize],
    remaining_blocks: std::ops::Range<usize>,
) -> Result<Tokens> {
    let mut subset = Vec::with_capacity(kept_patches.len() + 1);
    subset.push(tokens[0].clone());
    for &p in kept_patches {
        subset.push(tokens[p + 1].clone());
    }
    for b in remaining_blocks {
        subset = naive_block_forward(archive, config, b, &subset)?;
    }
    Ok(subset)
}

/// Direct-summation Shannon (`alpha = None`) or Rényi entropy, no
/// log-sum-exp rearrangement.
pub fn naive_entropy(dist: &[f64], alpha: Option<f64>) -> f64 {
    match alpha {
        None => {
            let mut acc = 0.0;
            for &p in dist {
                if p > 0.0 {
                    acc -= p * p.ln();
                }
            }
            acc
        }
        Some(a) => {
            let mut acc = 0.0;
            for &p in dist {
                if p > 0.0 {
                    acc += p.powf(a);
                }
            }
            acc.ln() / (1.0 - a)
        }
    }
}
