//! Seeded synthetic archives and images for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::ImageTensor;
use crate::model::ModelConfig;
use crate::weights::{ArchiveBuilder, WeightArchive};

/// Random weight archive for a geometry, reproducible from the seed.
/// Weights are small normal draws; layer-norm affines stay near identity so
/// activations remain well-scaled at any depth.
pub fn random_archive(config: &ModelConfig, seed: u64) -> WeightArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Normal::new(0.0, 0.02).unwrap();
    let mut b = ArchiveBuilder::new();
    let d = config.embed_dim;
    let hidden = config.ffn_hidden();
    let n = config.num_tokens();

    let draw = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f32> {
        (0..len).map(|_| w.sample(rng) as f32).collect()
    };

    b.add(
        "patch_embed.weight",
        &[d, config.patch_len()],
        &draw(&mut rng, d * config.patch_len()),
    );
    b.add("patch_embed.bias", &[d], &draw(&mut rng, d));
    b.add("pos_embed", &[n, d], &draw(&mut rng, n * d));
    b.add("cls_token", &[d], &draw(&mut rng, d));

    for i in 0..config.depth {
        let t = |s: &str| format!("blocks.{i}.{s}");
        for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            b.add(&t(&format!("{name}.weight")), &[d, d], &draw(&mut rng, d * d));
            b.add(&t(&format!("{name}.bias")), &[d], &draw(&mut rng, d));
        }
        for ln in ["ln1", "ln2"] {
            let gamma: Vec<f32> = draw(&mut rng, d).iter().map(|v| 1.0 + v).collect();
            b.add(&t(&format!("{ln}.gamma")), &[d], &gamma);
            b.add(&t(&format!("{ln}.beta")), &[d], &draw(&mut rng, d));
        }
        b.add(&t("ffn.fc1.weight"), &[hidden, d], &draw(&mut rng, hidden * d));
        b.add(&t("ffn.fc1.bias"), &[hidden], &draw(&mut rng, hidden));
        b.add(&t("ffn.fc2.weight"), &[d, hidden], &draw(&mut rng, d * hidden));
        b.add(&t("ffn.fc2.bias"), &[d], &draw(&mut rng, d));
    }

    let norm_gamma: Vec<f32> = draw(&mut rng, d).iter().map(|v| 1.0 + v).collect();
    b.add("norm.gamma", &[d], &norm_gamma);
    b.add("norm.beta", &[d], &draw(&mut rng, d));
    b.add(
        "head.weight",
        &[config.num_classes, d],
        &draw(&mut rng, config.num_classes * d),
    );
    b.add("head.bias", &[config.num_classes], &draw(&mut rng, config.num_classes));
    b.build()
}

/// Small seeded geometry (depth <= 4, d <= 8, heads <= 2, tokens <= 10) plus
/// a matching random archive. Suitable for scalar-oracle comparisons.
pub fn random_toy(seed: u64) -> (ModelConfig, WeightArchive) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x5851_F42D_4C95_7F2D) ^ 0xA5A5);
    let heads = rng.gen_range(1..=2usize);
    let head_dim = rng.gen_range(1..=4usize);
    let embed_dim = heads * head_dim;
    let patch_size = rng.gen_range(1..=2usize);
    let grid = rng.gen_range(1..=3usize);
    let channels = rng.gen_range(1..=2usize);
    let config = ModelConfig {
        depth: rng.gen_range(1..=4usize),
        heads,
        embed_dim,
        head_dim,
        patch_size,
        image_size: grid * patch_size,
        num_classes: rng.gen_range(2..=5usize),
        ffn_ratio: [1.0, 2.0, 4.0][rng.gen_range(0..3)],
        channels,
        mean: vec![0.5; channels],
        std: vec![0.25; channels],
    };
    let archive = random_archive(&config, rng.gen());
    (config, archive)
}

/// Uniform random pixels in [0,1], already normalized with the config's
/// mean/std, at the config's geometry.
pub fn random_normalized_image(config: &ModelConfig, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1337);
    let len = config.image_size * config.image_size * config.channels;
    let data = (0..len)
        .map(|i| {
            let c = i % config.channels;
            (rng.gen::<f64>() - config.mean[c]) / config.std[c]
        })
        .collect();
    ImageTensor::new(config.image_size, config.image_size, config.channels, data)
        .expect("consistent synthetic dimensions")
}

/// Raw [0,1] image with a high-contrast checker-textured square centered on a
/// flat background. Useful for qualitative entropy-map checks: the textured
/// region is the "object", the constant region the "background".
pub fn textured_square_image(size: usize, channels: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.5; size * size * channels];
    let lo = size / 4;
    let hi = size - size / 4;
    for y in lo..hi {
        for x in lo..hi {
            // 4px checker with pixel noise
            let base = if (y / 4 + x / 4) % 2 == 0 { 0.95 } else { 0.05 };
            for c in 0..channels {
                let v: f64 = base + rng.gen_range(-0.05..0.05);
                data[(y * size + x) * channels + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(size, size, channels, data).expect("consistent synthetic dimensions")
}

/// Pattern selector for generated demo images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagePattern {
    Constant,
    Noise,
    Square,
}

pub fn generate_image(
    pattern: ImagePattern,
    size: usize,
    channels: usize,
    seed: u64,
) -> ImageTensor {
    match pattern {
        ImagePattern::Constant => {
            ImageTensor::new(size, size, channels, vec![0.5; size * size * channels]).unwrap()
        }
        ImagePattern::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..size * size * channels).map(|_| rng.gen()).collect();
            ImageTensor::new(size, size, channels, data).unwrap()
        }
        ImagePattern::Square => textured_square_image(size, channels, seed),
    }
}
