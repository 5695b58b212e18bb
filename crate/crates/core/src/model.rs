//! The ViT forward pass: patchify, token embedding, pre-norm transformer
//! blocks (MHSA + FFN), classification head.
//!
//! Tokens flow as columns of a `d x n` matrix with the class token at column
//! 0. Every linear layer stores its weight as `[out, in]` and applies
//! `y = W x + b` per column, which maps one-to-one onto public ViT/DeiT
//! checkpoints. Attention rows are queries: row `i` of a head's matrix is the
//! softmax distribution of query token `i` over all key tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::linalg::{self, Matrix};
use crate::weights::WeightArchive;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Model geometry and preprocessing constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Transformer depth (number of blocks).
    pub depth: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Token embedding dimension d (= heads * head_dim).
    pub embed_dim: usize,
    /// Per-head dimension d'.
    pub head_dim: usize,
    /// Patch side length in pixels.
    pub patch_size: usize,
    /// Input image side length in pixels.
    pub image_size: usize,
    pub num_classes: usize,
    /// FFN hidden width as a multiple of embed_dim.
    pub ffn_ratio: f64,
    /// Input channels.
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Per-channel normalization constants applied after scaling to [0,1].
    #[serde(default = "default_mean")]
    pub mean: Vec<f64>,
    #[serde(default = "default_std")]
    pub std: Vec<f64>,
}

fn default_channels() -> usize {
    3
}

// ImageNet statistics, the usual constants for DeiT-family checkpoints.
fn default_mean() -> Vec<f64> {
    vec![0.485, 0.456, 0.406]
}

fn default_std() -> Vec<f64> {
    vec![0.229, 0.224, 0.225]
}

impl ModelConfig {
    /// DeiT-S geometry: 12 blocks, 6 heads, d=384, 16px patches, 224px input.
    pub fn deit_small() -> ModelConfig {
        ModelConfig {
            depth: 12,
            heads: 6,
            embed_dim: 384,
            head_dim: 64,
            patch_size: 16,
            image_size: 224,
            num_classes: 1000,
            ffn_ratio: 4.0,
            channels: 3,
            mean: default_mean(),
            std: default_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0
            || self.heads == 0
            || self.embed_dim == 0
            || self.head_dim == 0
            || self.patch_size == 0
            || self.image_size == 0
            || self.num_classes == 0
            || self.channels == 0
        {
            return Err(Error::Config("all model dimensions must be >= 1".into()));
        }
        if self.embed_dim != self.heads * self.head_dim {
            return Err(Error::Config(format!(
                "embed_dim {} != heads {} * head_dim {}",
                self.embed_dim, self.heads, self.head_dim
            )));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.ffn_hidden() == 0 {
            return Err(Error::Config("ffn_ratio too small".into()));
        }
        if self.mean.len() != self.channels || self.std.len() != self.channels {
            return Err(Error::Config(format!(
                "mean/std must have {} entries",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Token count of the dense model: patches plus the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.ffn_ratio * self.embed_dim as f64).round() as usize
    }
}

/// `d x n` column-token matrix. Column 0 is the class token; `patch_ids[k]`
/// is the original patch index of column `k + 1`.
#[derive(Debug, Clone)]
pub struct TokenMatrix {
    pub data: Matrix,
    pub patch_ids: Vec<usize>,
}

impl TokenMatrix {
    pub fn new(data: Matrix, patch_ids: Vec<usize>) -> Result<TokenMatrix> {
        if data.cols() == 0 {
            return Err(Error::Shape("token matrix needs at least the class token".into()));
        }
        if patch_ids.len() != data.cols() - 1 {
            return Err(Error::Shape(format!(
                "{} patch ids for {} patch columns",
                patch_ids.len(),
                data.cols() - 1
            )));
        }
        if !patch_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Shape("patch ids must be strictly increasing".into()));
        }
        Ok(TokenMatrix { data, patch_ids })
    }

    pub fn dim(&self) -> usize {
        self.data.rows()
    }

    /// Total token count, class token included.
    pub fn len(&self) -> usize {
        self.data.cols()
    }

    pub fn is_empty(&self) -> bool {
        false // class token is always present
    }

    pub fn num_patches(&self) -> usize {
        self.patch_ids.len()
    }
}

/// Per-head row-stochastic attention matrices of one block.
#[derive(Debug, Clone)]
pub struct AttentionTensor {
    pub heads: Vec<Matrix>,
}

impl AttentionTensor {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Token count n (matrices are n x n).
    pub fn len(&self) -> usize {
        self.heads.first().map_or(0, |h| h.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Weights of one transformer block. Attention projections are the full
/// `d x d` matrices; head `h` owns rows `h*d'..(h+1)*d'`.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub fc1_w: Matrix,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Matrix,
    pub fc2_b: Vec<f64>,
}

impl BlockParams {
    fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let d = config.embed_dim;
        let hidden = config.ffn_hidden();
        let square = |m: &Matrix| m.rows() == d && m.cols() == d;
        if !(square(&self.wq) && square(&self.wk) && square(&self.wv) && square(&self.wo)) {
            return Err(Error::Shape("attention projections must be d x d".into()));
        }
        if self.fc1_w.rows() != hidden || self.fc1_w.cols() != d {
            return Err(Error::Shape("fc1 must be hidden x d".into()));
        }
        if self.fc2_w.rows() != d || self.fc2_w.cols() != hidden {
            return Err(Error::Shape("fc2 must be d x hidden".into()));
        }
        let lens_ok = [&self.bq, &self.bk, &self.bv, &self.bo]
            .iter()
            .all(|b| b.len() == d)
            && self.ln1_gamma.len() == d
            && self.ln1_beta.len() == d
            && self.ln2_gamma.len() == d
            && self.ln2_beta.len() == d
            && self.fc1_b.len() == hidden
            && self.fc2_b.len() == d;
        if !lens_ok {
            return Err(Error::Shape("block bias/affine length mismatch".into()));
        }
        Ok(())
    }
}

/// A fully loaded model: config plus all weights widened to f64.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    patch_w: Matrix,
    patch_b: Vec<f64>,
    pos_embed: Matrix, // n_tokens x d, row 0 = class position
    cls_token: Vec<f64>,
    blocks: Vec<BlockParams>,
    norm_gamma: Vec<f64>,
    norm_beta: Vec<f64>,
    head_w: Matrix,
    head_b: Vec<f64>,
}

impl Model {
    pub fn from_archive(archive: &WeightArchive, config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let d = config.embed_dim;
        let hidden = config.ffn_hidden();
        let n = config.num_tokens();

        let mut blocks = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let t = |suffix: &str| format!("blocks.{i}.{suffix}");
            let block = BlockParams {
                wq: archive.get_tensor(&t("attn.wq.weight"), &[d, d])?,
                bq: archive.get_vector(&t("attn.wq.bias"), d)?,
                wk: archive.get_tensor(&t("attn.wk.weight"), &[d, d])?,
                bk: archive.get_vector(&t("attn.wk.bias"), d)?,
                wv: archive.get_tensor(&t("attn.wv.weight"), &[d, d])?,
                bv: archive.get_vector(&t("attn.wv.bias"), d)?,
                wo: archive.get_tensor(&t("attn.wo.weight"), &[d, d])?,
                bo: archive.get_vector(&t("attn.wo.bias"), d)?,
                ln1_gamma: archive.get_vector(&t("ln1.gamma"), d)?,
                ln1_beta: archive.get_vector(&t("ln1.beta"), d)?,
                ln2_gamma: archive.get_vector(&t("ln2.gamma"), d)?,
                ln2_beta: archive.get_vector(&t("ln2.beta"), d)?,
                fc1_w: archive.get_tensor(&t("ffn.fc1.weight"), &[hidden, d])?,
                fc1_b: archive.get_vector(&t("ffn.fc1.bias"), hidden)?,
                fc2_w: archive.get_tensor(&t("ffn.fc2.weight"), &[d, hidden])?,
                fc2_b: archive.get_vector(&t("ffn.fc2.bias"), d)?,
            };
            block.check_shapes(&config)?;
            blocks.push(block);
        }

        Ok(Model {
            patch_w: archive.get_tensor("patch_embed.weight", &[d, config.patch_len()])?,
            patch_b: archive.get_vector("patch_embed.bias", d)?,
            pos_embed: archive.get_tensor("pos_embed", &[n, d])?,
            cls_token: archive.get_vector("cls_token", d)?,
            norm_gamma: archive.get_vector("norm.gamma", d)?,
            norm_beta: archive.get_vector("norm.beta", d)?,
            head_w: archive.get_tensor("head.weight", &[config.num_classes, d])?,
            head_b: archive.get_vector("head.bias", config.num_classes)?,
            blocks,
            config,
        })
    }

    pub fn block(&self, index: usize) -> &BlockParams {
        &self.blocks[index]
    }

    /// Patchify + project + positional embeddings + class token.
    pub fn embed(&self, image: &ImageTensor) -> Result<TokenMatrix> {
        let patches = patchify(image, self.config.patch_size)?;
        self.embed_tokens(&patches)
    }

    /// Linear patch projection with the class token prepended at column 0 and
    /// positional embeddings added to every column.
    pub fn embed_tokens(&self, patches: &[Vec<f64>]) -> Result<TokenMatrix> {
        let expected = self.config.num_patches();
        if patches.len() != expected {
            return Err(Error::Shape(format!(
                "{} patches, model expects {}",
                patches.len(),
                expected
            )));
        }
        let d = self.config.embed_dim;
        let n = expected + 1;
        let mut tokens = Matrix::zeros(d, n);

        for (i, v) in self.cls_token.iter().enumerate() {
            tokens.set(i, 0, v + self.pos_embed.get(0, i));
        }
        for (p, patch) in patches.iter().enumerate() {
            if patch.len() != self.config.patch_len() {
                return Err(Error::Shape(format!(
                    "patch {} has length {}, expected {}",
                    p,
                    patch.len(),
                    self.config.patch_len()
                )));
            }
            for i in 0..d {
                let row = self.patch_w.row(i);
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(patch) {
                    acc += w * x;
                }
                tokens.set(i, p + 1, acc + self.patch_b[i] + self.pos_embed.get(p + 1, i));
            }
        }
        TokenMatrix::new(tokens, (0..expected).collect())
    }

    /// One pre-norm block; also returns the attention computed inside it.
    pub fn block_forward(&self, x: &TokenMatrix, index: usize) -> Result<(TokenMatrix, AttentionTensor)> {
        if index >= self.blocks.len() {
            return Err(Error::Config(format!(
                "block index {} out of depth {}",
                index,
                self.blocks.len()
            )));
        }
        block_forward(x, &self.blocks[index], &self.config)
    }

    /// Final layer norm on the class token, linear head, softmax.
    pub fn classify(&self, x: &TokenMatrix) -> Result<Vec<f64>> {
        let cls = Matrix::from_vec(self.config.embed_dim, 1, x.data.col(0))?;
        let normed = linalg::layer_norm(&cls, &self.norm_gamma, &self.norm_beta, LAYER_NORM_EPS)?;
        let logits = linalg::add_bias(&linalg::matmul(&self.head_w, &normed)?, &self.head_b)?;
        let probs = linalg::softmax_rows(&logits.transpose());
        Ok(probs.row(0).to_vec())
    }
}

/// Cut an image into `(H/p) * (W/p)` flattened patch vectors in row-major
/// grid order. Each vector is channel-major `[c][py][px]`, matching the
/// flattening of a conv-style patch embedding kernel.
pub fn patchify(image: &ImageTensor, patch_size: usize) -> Result<Vec<Vec<f64>>> {
    let p = patch_size;
    if p == 0 || !image.height.is_multiple_of(p) || !image.width.is_multiple_of(p) {
        return Err(Error::Shape(format!(
            "image {}x{} not divisible into {}px patches",
            image.height, image.width, p
        )));
    }
    let (gh, gw) = (image.height / p, image.width / p);
    let mut patches = Vec::with_capacity(gh * gw);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut v = Vec::with_capacity(p * p * image.channels);
            for c in 0..image.channels {
                for py in 0..p {
                    for px in 0..p {
                        v.push(image.get(gy * p + py, gx * p + px, c));
                    }
                }
            }
            patches.push(v);
        }
    }
    Ok(patches)
}

/// Per-head attention of the given token matrix: logits `q_i . k_j / sqrt(d')`
/// row-softmaxed over keys. `x` is used as-is; the block applies LN1 first.
pub fn attention_weights(
    x: &TokenMatrix,
    params: &BlockParams,
    config: &ModelConfig,
) -> Result<AttentionTensor> {
    let q = linalg::add_bias(&linalg::matmul(&params.wq, &x.data)?, &params.bq)?;
    let k = linalg::add_bias(&linalg::matmul(&params.wk, &x.data)?, &params.bk)?;
    let scale = 1.0 / (config.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = q.row_block(h * config.head_dim, config.head_dim)?;
        let kh = k.row_block(h * config.head_dim, config.head_dim)?;
        let mut logits = linalg::matmul(&qh.transpose(), &kh)?;
        let scaled: Vec<f64> = logits.data().iter().map(|v| v * scale).collect();
        logits = Matrix::from_vec(logits.rows(), logits.cols(), scaled)?;
        heads.push(linalg::softmax_rows(&logits));
    }
    Ok(AttentionTensor { heads })
}

/// Pre-norm transformer block:
/// `u = x + W_O . concat_h(V_h A_h^T)` on `LN1(x)`, then `u + FFN(LN2(u))`.
/// Token count and patch ids pass through unchanged.
pub fn block_forward(
    x: &TokenMatrix,
    params: &BlockParams,
    config: &ModelConfig,
) -> Result<(TokenMatrix, AttentionTensor)> {
    if x.dim() != config.embed_dim {
        return Err(Error::Shape(format!(
            "token dim {} != embed dim {}",
            x.dim(),
            config.embed_dim
        )));
    }
    let normed = TokenMatrix::new(
        linalg::layer_norm(&x.data, &params.ln1_gamma, &params.ln1_beta, LAYER_NORM_EPS)?,
        x.patch_ids.clone(),
    )?;
    let attn = attention_weights(&normed, params, config)?;

    let v = linalg::add_bias(&linalg::matmul(&params.wv, &normed.data)?, &params.bv)?;
    let d = config.embed_dim;
    let n = x.len();
    let mut context = Matrix::zeros(d, n);
    for (h, attn_h) in attn.heads.iter().enumerate() {
        let vh = v.row_block(h * config.head_dim, config.head_dim)?;
        // column i of the head context = V_h . (attention row of query i)
        let ctx_h = linalg::matmul(&vh, &attn_h.transpose())?;
        for r in 0..config.head_dim {
            for c in 0..n {
                context.set(h * config.head_dim + r, c, ctx_h.get(r, c));
            }
        }
    }
    let mhsa = linalg::add_bias(&linalg::matmul(&params.wo, &context)?, &params.bo)?;
    let u = linalg::add(&x.data, &mhsa)?;

    let normed2 = linalg::layer_norm(&u, &params.ln2_gamma, &params.ln2_beta, LAYER_NORM_EPS)?;
    let hidden = linalg::gelu(&linalg::add_bias(
        &linalg::matmul(&params.fc1_w, &normed2)?,
        &params.fc1_b,
    )?);
    let ffn = linalg::add_bias(&linalg::matmul(&params.fc2_w, &hidden)?, &params.fc2_b)?;
    let out = linalg::add(&u, &ffn)?;

    Ok((TokenMatrix::new(out, x.patch_ids.clone())?, attn))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // hand-unrolled scalar oracles
mod tests {
    use super::*;
    use crate::weights::ArchiveBuilder;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            depth: 1,
            heads: 1,
            embed_dim: 2,
            head_dim: 2,
            patch_size: 1,
            image_size: 2,
            num_classes: 2,
            ffn_ratio: 2.0,
            channels: 1,
            mean: vec![0.0],
            std: vec![1.0],
        }
    }

    fn zero_block(config: &ModelConfig) -> BlockParams {
        let d = config.embed_dim;
        let hidden = config.ffn_hidden();
        BlockParams {
            wq: Matrix::zeros(d, d),
            bq: vec![0.0; d],
            wk: Matrix::zeros(d, d),
            bk: vec![0.0; d],
            wv: Matrix::zeros(d, d),
            bv: vec![0.0; d],
            wo: Matrix::zeros(d, d),
            bo: vec![0.0; d],
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            fc1_w: Matrix::zeros(hidden, d),
            fc1_b: vec![0.0; hidden],
            fc2_w: Matrix::zeros(d, hidden),
            fc2_b: vec![0.0; d],
        }
    }

    fn tokens(cols: &[[f64; 2]]) -> TokenMatrix {
        let n = cols.len();
        let mut m = Matrix::zeros(2, n);
        for (j, col) in cols.iter().enumerate() {
            m.set(0, j, col[0]);
            m.set(1, j, col[1]);
        }
        TokenMatrix::new(m, (0..n - 1).collect()).unwrap()
    }

    #[test]
    fn patchify_layout() {
        // 4x4 grayscale, pixel value = linear index
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let img = ImageTensor::new(4, 4, 1, data).unwrap();
        let patches = patchify(&img, 2).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[0], vec![0.0, 1.0, 4.0, 5.0]); // top-left 2x2
        assert_eq!(patches[3], vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn patchify_constant_image() {
        let img = ImageTensor::new(4, 4, 2, vec![0.25; 32]).unwrap();
        let patches = patchify(&img, 2).unwrap();
        assert!(patches.iter().all(|p| p == &patches[0]));
    }

    #[test]
    fn patchify_deit_geometry() {
        let img = ImageTensor::new(224, 224, 3, vec![0.0; 224 * 224 * 3]).unwrap();
        let patches = patchify(&img, 16).unwrap();
        assert_eq!(patches.len(), 196);
        assert_eq!(patches[0].len(), 768);
    }

    #[test]
    fn patchify_indivisible_is_error() {
        let img = ImageTensor::new(5, 5, 1, vec![0.0; 25]).unwrap();
        assert!(matches!(patchify(&img, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_single_token_is_one() {
        let config = toy_config();
        let params = zero_block(&config);
        let x = tokens(&[[1.0, -1.0]]);
        let attn = attention_weights(&x, &params, &config).unwrap();
        assert_eq!(attn.heads.len(), 1);
        assert_eq!(attn.heads[0].get(0, 0), 1.0);
    }

    #[test]
    fn zero_projections_give_uniform_attention() {
        let config = toy_config();
        let params = zero_block(&config);
        let x = tokens(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]]);
        let attn = attention_weights(&x, &params, &config).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((attn.heads[0].get(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_matches_scalar_recomputation() {
        // 3 tokens, 1 head, d = d' = 2, hand-set projections.
        let config = toy_config();
        let mut params = zero_block(&config);
        params.wq = Matrix::from_vec(2, 2, vec![0.3, -0.1, 0.2, 0.4]).unwrap();
        params.bq = vec![0.05, -0.02];
        params.wk = Matrix::from_vec(2, 2, vec![-0.2, 0.5, 0.1, 0.6]).unwrap();
        params.bk = vec![-0.1, 0.3];
        let cols = [[0.9, -0.4], [0.1, 0.8], [-0.7, 0.2]];
        let x = tokens(&cols);
        let attn = attention_weights(&x, &params, &config).unwrap();

        let project = |w: &Matrix, b: &[f64], t: &[f64; 2]| -> [f64; 2] {
            [
                w.get(0, 0) * t[0] + w.get(0, 1) * t[1] + b[0],
                w.get(1, 0) * t[0] + w.get(1, 1) * t[1] + b[1],
            ]
        };
        let scale = 1.0 / (2.0f64).sqrt();
        for i in 0..3 {
            let q = project(&params.wq, &params.bq, &cols[i]);
            let logits: Vec<f64> = cols
                .iter()
                .map(|t| {
                    let k = project(&params.wk, &params.bk, t);
                    (q[0] * k[0] + q[1] * k[1]) * scale
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..3 {
                assert!((attn.heads[0].get(i, j) - exps[j] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_paths_make_block_identity() {
        // wo = 0, bo = 0, fc2 = 0: both residual branches add exactly zero.
        let config = toy_config();
        let mut params = zero_block(&config);
        params.wq = Matrix::from_vec(2, 2, vec![0.5, 0.1, -0.3, 0.2]).unwrap();
        params.wk = Matrix::from_vec(2, 2, vec![0.1, 0.7, 0.2, -0.5]).unwrap();
        params.wv = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        params.fc1_w = Matrix::from_vec(4, 2, vec![0.3; 8]).unwrap();
        let x = tokens(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]]);
        let (out, attn) = block_forward(&x, &params, &config).unwrap();
        assert_eq!(out.data, x.data);
        assert_eq!(out.patch_ids, x.patch_ids);
        assert_eq!(attn.len(), 3);
    }

    #[test]
    fn block_matches_hand_unrolled_toy() {
        // 2 tokens, 1 head, d = d' = 2: full scalar transcription of the
        // block, checked at 1e-12.
        let config = toy_config();
        let mut params = zero_block(&config);
        params.wq = Matrix::from_vec(2, 2, vec![0.4, -0.2, 0.1, 0.3]).unwrap();
        params.bq = vec![0.02, -0.07];
        params.wk = Matrix::from_vec(2, 2, vec![0.6, 0.2, -0.1, 0.5]).unwrap();
        params.bk = vec![0.0, 0.11];
        params.wv = Matrix::from_vec(2, 2, vec![-0.4, 0.9, 0.3, 0.2]).unwrap();
        params.bv = vec![0.05, 0.06];
        params.wo = Matrix::from_vec(2, 2, vec![0.7, -0.3, 0.25, 0.45]).unwrap();
        params.bo = vec![-0.01, 0.02];
        params.ln1_gamma = vec![1.1, 0.9];
        params.ln1_beta = vec![0.05, -0.05];
        params.ln2_gamma = vec![0.95, 1.05];
        params.ln2_beta = vec![-0.02, 0.03];
        params.fc1_w = Matrix::from_vec(4, 2, vec![0.2, -0.4, 0.5, 0.1, -0.3, 0.6, 0.05, 0.15]).unwrap();
        params.fc1_b = vec![0.01, -0.02, 0.03, 0.0];
        params.fc2_w = Matrix::from_vec(2, 4, vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2, 0.6, -0.1]).unwrap();
        params.fc2_b = vec![0.04, -0.03];

        let cols = [[0.8, -0.6], [-0.2, 1.4]];
        let x = tokens(&cols);
        let (out, _) = block_forward(&x, &params, &config).unwrap();

        // --- scalar re-derivation ---
        let ln = |t: [f64; 2], g: &[f64], b: &[f64]| -> [f64; 2] {
            let mean = (t[0] + t[1]) / 2.0;
            let var = ((t[0] - mean).powi(2) + (t[1] - mean).powi(2)) / 2.0;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            [g[0] * (t[0] - mean) * inv + b[0], g[1] * (t[1] - mean) * inv + b[1]]
        };
        let mat = |w: &Matrix, t: [f64; 2], b: &[f64]| -> [f64; 2] {
            [
                w.get(0, 0) * t[0] + w.get(0, 1) * t[1] + b[0],
                w.get(1, 0) * t[0] + w.get(1, 1) * t[1] + b[1],
            ]
        };
        let a = [ln(cols[0], &params.ln1_gamma, &params.ln1_beta),
                 ln(cols[1], &params.ln1_gamma, &params.ln1_beta)];
        let qs = [mat(&params.wq, a[0], &params.bq), mat(&params.wq, a[1], &params.bq)];
        let ks = [mat(&params.wk, a[0], &params.bk), mat(&params.wk, a[1], &params.bk)];
        let vs = [mat(&params.wv, a[0], &params.bv), mat(&params.wv, a[1], &params.bv)];
        let scale = 1.0 / (2.0f64).sqrt();
        let mut u = [[0.0; 2]; 2];
        for i in 0..2 {
            let l0 = (qs[i][0] * ks[0][0] + qs[i][1] * ks[0][1]) * scale;
            let l1 = (qs[i][0] * ks[1][0] + qs[i][1] * ks[1][1]) * scale;
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            let z = e0 + e1;
            let (a0, a1) = (e0 / z, e1 / z);
            let ctx = [a0 * vs[0][0] + a1 * vs[1][0], a0 * vs[0][1] + a1 * vs[1][1]];
            let proj = mat(&params.wo, ctx, &params.bo);
            u[i] = [cols[i][0] + proj[0], cols[i][1] + proj[1]];
        }
        for i in 0..2 {
            let f = ln(u[i], &params.ln2_gamma, &params.ln2_beta);
            let mut hidden = [0.0; 4];
            for (r, h) in hidden.iter_mut().enumerate() {
                *h = crate::linalg::gelu_scalar(
                    params.fc1_w.get(r, 0) * f[0] + params.fc1_w.get(r, 1) * f[1] + params.fc1_b[r],
                );
            }
            for r in 0..2 {
                let mut acc = params.fc2_b[r];
                for (c, h) in hidden.iter().enumerate() {
                    acc += params.fc2_w.get(r, c) * h;
                }
                let expected = u[i][r] + acc;
                assert!((out.data.get(r, i) - expected).abs() < 1e-12);
            }
        }
    }

    fn identity_embed_archive_with_bias(
        config: &ModelConfig,
        patch_bias: &[f32],
    ) -> crate::weights::WeightArchive {
        let d = config.embed_dim;
        let n = config.num_tokens();
        let hidden = config.ffn_hidden();
        let mut b = ArchiveBuilder::new();
        // identity projection requires d == patch_len
        let mut eye = vec![0.0f32; d * config.patch_len()];
        for i in 0..d.min(config.patch_len()) {
            eye[i * config.patch_len() + i] = 1.0;
        }
        b.add("patch_embed.weight", &[d, config.patch_len()], &eye);
        b.add("patch_embed.bias", &[d], patch_bias);
        b.add("pos_embed", &[n, d], &vec![0.0; n * d]);
        b.add("cls_token", &[d], &vec![0.0; d]);
        for i in 0..config.depth {
            let t = |s: &str| format!("blocks.{i}.{s}");
            for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                b.add(&t(&format!("{name}.weight")), &[d, d], &vec![0.0; d * d]);
                b.add(&t(&format!("{name}.bias")), &[d], &vec![0.0; d]);
            }
            b.add(&t("ln1.gamma"), &[d], &vec![1.0; d]);
            b.add(&t("ln1.beta"), &[d], &vec![0.0; d]);
            b.add(&t("ln2.gamma"), &[d], &vec![1.0; d]);
            b.add(&t("ln2.beta"), &[d], &vec![0.0; d]);
            b.add(&t("ffn.fc1.weight"), &[hidden, d], &vec![0.0; hidden * d]);
            b.add(&t("ffn.fc1.bias"), &[hidden], &vec![0.0; hidden]);
            b.add(&t("ffn.fc2.weight"), &[d, hidden], &vec![0.0; d * hidden]);
            b.add(&t("ffn.fc2.bias"), &[d], &vec![0.0; d]);
        }
        b.add("norm.gamma", &[d], &vec![1.0; d]);
        b.add("norm.beta", &[d], &vec![0.0; d]);
        b.add(
            "head.weight",
            &[config.num_classes, d],
            &vec![0.0; config.num_classes * d],
        );
        b.add("head.bias", &[config.num_classes], &vec![0.0; config.num_classes]);
        b.build()
    }

    fn identity_embed_archive(config: &ModelConfig) -> crate::weights::WeightArchive {
        identity_embed_archive_with_bias(config, &vec![0.0; config.embed_dim])
    }

    #[test]
    fn embed_token_count_matches_deit_geometry() {
        let config = ModelConfig::deit_small();
        assert_eq!(config.num_tokens(), 197);
        assert_eq!(config.num_patches(), 196);
    }

    #[test]
    fn embed_identity_projection_passes_patches_through() {
        // d = 4 = patch_len (p=2, C=1), zero pos/cls/bias
        let config = ModelConfig {
            depth: 1,
            heads: 1,
            embed_dim: 4,
            head_dim: 4,
            patch_size: 2,
            image_size: 4,
            num_classes: 2,
            ffn_ratio: 2.0,
            channels: 1,
            mean: vec![0.0],
            std: vec![1.0],
        };
        let model = Model::from_archive(&identity_embed_archive(&config), config.clone()).unwrap();
        let img = ImageTensor::new(4, 4, 1, (0..16).map(|v| v as f64 / 16.0).collect()).unwrap();
        let patches = patchify(&img, 2).unwrap();
        let x = model.embed(&img).unwrap();
        assert_eq!(x.len(), 5);
        assert_eq!(x.patch_ids, vec![0, 1, 2, 3]);
        for (p, patch) in patches.iter().enumerate() {
            for i in 0..4 {
                assert_eq!(x.data.get(i, p + 1), patch[i]);
            }
        }
        // class column: zero token + zero positional
        for i in 0..4 {
            assert_eq!(x.data.get(i, 0), 0.0);
        }
    }

    #[test]
    fn embed_zero_patches_leave_bias_columns() {
        let config = ModelConfig {
            depth: 1,
            heads: 1,
            embed_dim: 4,
            head_dim: 4,
            patch_size: 2,
            image_size: 4,
            num_classes: 2,
            ffn_ratio: 2.0,
            channels: 1,
            mean: vec![0.0],
            std: vec![1.0],
        };
        let archive = identity_embed_archive_with_bias(&config, &[0.5, -0.5, 1.0, 2.0]);
        let model = Model::from_archive(&archive, config).unwrap();
        let img = ImageTensor::new(4, 4, 1, vec![0.0; 16]).unwrap();
        let x = model.embed(&img).unwrap();
        for p in 1..5 {
            assert_eq!(x.data.col(p), vec![0.5, -0.5, 1.0, 2.0]);
        }
    }

    #[test]
    fn classify_zero_head_is_uniform() {
        let config = ModelConfig {
            depth: 1,
            heads: 1,
            embed_dim: 4,
            head_dim: 4,
            patch_size: 2,
            image_size: 4,
            num_classes: 2,
            ffn_ratio: 2.0,
            channels: 1,
            mean: vec![0.0],
            std: vec![1.0],
        };
        let model = Model::from_archive(&identity_embed_archive(&config), config).unwrap();
        let img = ImageTensor::new(4, 4, 1, (0..16).map(|v| v as f64 / 20.0).collect()).unwrap();
        let x = model.embed(&img).unwrap();
        let probs = model.classify(&x).unwrap();
        assert_eq!(probs.len(), 2);
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classify_toy_head_matches_scalar_math() {
        let config = toy_config();
        let d = 2;
        let mut b = ArchiveBuilder::new();
        b.add("patch_embed.weight", &[d, 1], &[1.0, 0.0]);
        b.add("patch_embed.bias", &[d], &[0.0, 0.0]);
        b.add("pos_embed", &[5, d], &[0.0; 10]);
        b.add("cls_token", &[d], &[2.0, -1.0]);
        for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            b.add(&format!("blocks.0.{name}.weight"), &[d, d], &[0.0; 4]);
            b.add(&format!("blocks.0.{name}.bias"), &[d], &[0.0; 2]);
        }
        b.add("blocks.0.ln1.gamma", &[d], &[1.0; 2]);
        b.add("blocks.0.ln1.beta", &[d], &[0.0; 2]);
        b.add("blocks.0.ln2.gamma", &[d], &[1.0; 2]);
        b.add("blocks.0.ln2.beta", &[d], &[0.0; 2]);
        b.add("blocks.0.ffn.fc1.weight", &[4, d], &[0.0; 8]);
        b.add("blocks.0.ffn.fc1.bias", &[4], &[0.0; 4]);
        b.add("blocks.0.ffn.fc2.weight", &[d, 4], &[0.0; 8]);
        b.add("blocks.0.ffn.fc2.bias", &[d], &[0.0; 2]);
        b.add("norm.gamma", &[d], &[1.0; 2]);
        b.add("norm.beta", &[d], &[0.0; 2]);
        b.add("head.weight", &[2, d], &[1.0, -1.0, -1.0, 1.0]);
        b.add("head.bias", &[2], &[0.125, -0.125]);
        let model = Model::from_archive(&b.build(), config).unwrap();

        let x = tokens(&[[2.0, -1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let probs = model.classify(&x).unwrap();
        // class token [2,-1]: mean 0.5, var 2.25 -> normalized [1, -1] (eps-scaled)
        let inv = 1.0 / (2.25f64 + LAYER_NORM_EPS).sqrt();
        let normed = [1.5 * inv, -1.5 * inv];
        let l0 = normed[0] - normed[1] + 0.125;
        let l1 = -normed[0] + normed[1] - 0.125;
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        assert!((probs[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((probs[1] - e1 / (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn attention_is_content_equivariant_under_patch_permutation() {
        // Swap two patch columns (pos already baked in): attention rows and
        // columns permute the same way.
        let config = toy_config();
        let mut params = zero_block(&config);
        params.wq = Matrix::from_vec(2, 2, vec![0.4, -0.2, 0.1, 0.3]).unwrap();
        params.wk = Matrix::from_vec(2, 2, vec![0.6, 0.2, -0.1, 0.5]).unwrap();
        let x = tokens(&[[0.1, 0.9], [1.0, -0.5], [-0.3, 0.7], [0.2, 0.2]]);
        // permutation: swap patch columns 1 and 3 (token indices), class fixed
        let perm = [0usize, 3, 2, 1];
        let mut pdata = Matrix::zeros(2, 4);
        for (new_j, &old_j) in perm.iter().enumerate() {
            for i in 0..2 {
                pdata.set(i, new_j, x.data.get(i, old_j));
            }
        }
        let xp = TokenMatrix::new(pdata, vec![0, 1, 2]).unwrap();
        let a = attention_weights(&x, &params, &config).unwrap();
        let ap = attention_weights(&xp, &params, &config).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let got = ap.heads[0].get(i, j);
                let want = a.heads[0].get(perm[i], perm[j]);
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}
