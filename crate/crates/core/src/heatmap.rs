//! Per-patch entropy heatmaps on the patch grid.
//!
//! Scores are head-averaged entropies at one block, reshaped to the full
//! patch grid and min-max normalized to 8-bit for a binary PGM. Patches
//! pruned before the block render at the maximum value (they were judged
//! redundant). Raw scores ship alongside in a sidecar, so the normalization
//! is never destructive.

use serde::{Deserialize, Serialize};

use crate::entropy::{self, Criterion};
use crate::error::{Error, Result};
use crate::image::{self, ImageTensor};
use crate::model::Model;
use crate::prune::{self, PruneSchedule};

/// Raw data behind a rendered heatmap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub block: usize,
    pub criterion: String,
    pub alpha: Option<f64>,
    /// Patch grid dimensions [height, width].
    pub grid: [usize; 2],
    /// Original patch ids surviving at the block, aligned with `scores`.
    pub patch_ids: Vec<usize>,
    /// Head-averaged entropy per surviving patch, in nats.
    pub scores: Vec<f64>,
    pub score_min: f64,
    pub score_max: f64,
    /// Attention-weighted mean query-key distance per head, in pixels.
    pub attention_distance_px: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EntropyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major 8-bit values, one per patch grid cell.
    pub pixels: Vec<u8>,
    pub sidecar: HeatmapSidecar,
}

impl EntropyMap {
    pub fn to_pgm(&self) -> Vec<u8> {
        image::encode_pgm(self.width, self.height, &self.pixels)
    }
}

/// Compute the entropy heatmap of `block` (1-indexed) for an image run under
/// the given schedule. `alpha` switches the map to Rényi entropy of that
/// order; otherwise Shannon entropy is used.
pub fn entropy_map(
    model: &Model,
    img: &ImageTensor,
    schedule: &PruneSchedule,
    block: usize,
    alpha: Option<f64>,
) -> Result<EntropyMap> {
    if block == 0 || block > model.config.depth {
        return Err(Error::Config(format!(
            "heatmap block {} outside 1..={}",
            block, model.config.depth
        )));
    }
    let criterion = match alpha {
        Some(alpha) => Criterion::Renyi { alpha },
        None => Criterion::Shannon,
    };
    criterion.validate()?;

    let run = prune::run_forward(model, img, schedule, Some(block))?;
    let captured = run.captured.expect("requested block is always captured");
    let scores = entropy::head_averaged_scores(
        &captured.attn,
        &criterion,
        block,
        schedule.include_class,
    )?;
    let distance = entropy::attention_distance(
        &captured.attn,
        model.config.grid_side(),
        model.config.patch_size,
        &captured.patch_ids,
    )?;

    let side = model.config.grid_side();
    let (min, max) = scores
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    // Dropped patches render at the maximum; surviving constant maps go to 0.
    let mut pixels = vec![255u8; side * side];
    for (&id, &score) in captured.patch_ids.iter().zip(&scores.values) {
        let v = if max > min {
            ((score - min) / (max - min) * 255.0).round() as u8
        } else {
            0
        };
        pixels[id] = v;
    }

    Ok(EntropyMap {
        width: side,
        height: side,
        pixels,
        sidecar: HeatmapSidecar {
            block,
            criterion: criterion.name().to_string(),
            alpha,
            grid: [side, side],
            patch_ids: captured.patch_ids,
            scores: scores.values,
            score_min: min,
            score_max: max,
            attention_distance_px: distance,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth;
    use crate::weights::ArchiveBuilder;

    // Archive with zero q/k projections: attention is uniform everywhere.
    fn uniform_attention_model() -> Model {
        let config = ModelConfig {
            depth: 2,
            heads: 2,
            embed_dim: 4,
            head_dim: 2,
            patch_size: 2,
            image_size: 6,
            num_classes: 3,
            ffn_ratio: 2.0,
            channels: 1,
            mean: vec![0.5],
            std: vec![0.25],
        };
        let d = 4;
        let hidden = config.ffn_hidden();
        let n = config.num_tokens();
        let mut b = ArchiveBuilder::new();
        b.add("patch_embed.weight", &[d, config.patch_len()], &[0.1; 16]);
        b.add("patch_embed.bias", &[d], &[0.0; 4]);
        b.add("pos_embed", &[n, d], &vec![0.01; n * 4]);
        b.add("cls_token", &[d], &[0.2; 4]);
        for i in 0..config.depth {
            let t = |s: &str| format!("blocks.{i}.{s}");
            for name in ["attn.wq", "attn.wk"] {
                b.add(&t(&format!("{name}.weight")), &[d, d], &[0.0; 16]);
                b.add(&t(&format!("{name}.bias")), &[d], &[0.0; 4]);
            }
            for name in ["attn.wv", "attn.wo"] {
                b.add(&t(&format!("{name}.weight")), &[d, d], &[0.05; 16]);
                b.add(&t(&format!("{name}.bias")), &[d], &[0.0; 4]);
            }
            for ln in ["ln1", "ln2"] {
                b.add(&t(&format!("{ln}.gamma")), &[d], &[1.0; 4]);
                b.add(&t(&format!("{ln}.beta")), &[d], &[0.0; 4]);
            }
            b.add(&t("ffn.fc1.weight"), &[hidden, d], &vec![0.02; hidden * 4]);
            b.add(&t("ffn.fc1.bias"), &[hidden], &vec![0.0; hidden]);
            b.add(&t("ffn.fc2.weight"), &[d, hidden], &vec![0.02; 4 * hidden]);
            b.add(&t("ffn.fc2.bias"), &[d], &[0.0; 4]);
        }
        b.add("norm.gamma", &[d], &[1.0; 4]);
        b.add("norm.beta", &[d], &[0.0; 4]);
        b.add("head.weight", &[3, d], &[0.1; 12]);
        b.add("head.bias", &[3], &[0.0; 3]);
        let config_clone = config.clone();
        Model::from_archive(&b.build(), config_clone).unwrap()
    }

    #[test]
    fn uniform_attention_gives_constant_map() {
        let model = uniform_attention_model();
        let img = synth::random_normalized_image(&model.config, 5);
        let map = entropy_map(&model, &img, &PruneSchedule::dense(), 1, None).unwrap();
        assert_eq!(map.width, 3);
        assert_eq!(map.height, 3);
        assert!(map.pixels.iter().all(|&p| p == 0));
        // 9 patches attending uniformly: every score is ln 9
        for &s in &map.sidecar.scores {
            assert!((s - (9.0f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn sidecar_matches_head_averaged_scores() {
        let (config, archive) = synth::random_toy(14);
        let model = Model::from_archive(&archive, config.clone()).unwrap();
        let img = synth::random_normalized_image(&config, 6);
        let map = entropy_map(&model, &img, &PruneSchedule::dense(), 1, Some(2.0)).unwrap();
        let run = prune::run_forward(&model, &img, &PruneSchedule::dense(), Some(1)).unwrap();
        let expected = entropy::head_averaged_scores(
            &run.captured.unwrap().attn,
            &Criterion::Renyi { alpha: 2.0 },
            1,
            false,
        )
        .unwrap();
        assert_eq!(map.sidecar.scores, expected.values);
    }

    #[test]
    fn dropped_patches_render_at_max() {
        // first toy seed with depth >= 2 and a 3x3 patch grid
        let (config, archive) = (0..64)
            .map(synth::random_toy)
            .find(|(c, _)| c.depth >= 2 && c.num_patches() >= 4)
            .expect("toy sampler covers this geometry");
        let model = Model::from_archive(&archive, config.clone()).unwrap();
        let img = synth::random_normalized_image(&config, 7);
        let schedule = PruneSchedule::new(0.5, Criterion::Shannon).with_blocks([1]);
        let map = entropy_map(&model, &img, &schedule, 2, None).unwrap();
        let surviving: std::collections::BTreeSet<usize> =
            map.sidecar.patch_ids.iter().copied().collect();
        for id in 0..config.num_patches() {
            if !surviving.contains(&id) {
                assert_eq!(map.pixels[id], 255);
            }
        }
        assert!(surviving.len() < config.num_patches());
    }

    #[test]
    fn block_out_of_range_is_config_error() {
        let model = uniform_attention_model();
        let img = synth::random_normalized_image(&model.config, 5);
        assert!(matches!(
            entropy_map(&model, &img, &PruneSchedule::dense(), 9, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pgm_bytes_are_wellformed() {
        let model = uniform_attention_model();
        let img = synth::random_normalized_image(&model.config, 5);
        let map = entropy_map(&model, &img, &PruneSchedule::dense(), 1, None).unwrap();
        let pgm = map.to_pgm();
        let decoded = image::decode_image(&pgm).unwrap();
        assert_eq!(decoded.height, 3);
        assert_eq!(decoded.width, 3);
    }
}
