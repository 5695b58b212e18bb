//! Engine-vs-oracle agreement on seeded toy models.

use entroprune_core::entropy::{self, Criterion, PatchDistribution};
use entroprune_core::model::Model;
use entroprune_core::prune::{self, PruneSchedule};
use entroprune_core::synth;
use entroprune_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dense_forward_agrees_with_scalar_oracle() {
    for seed in 0..100 {
        let (spec, archive) = oracle::ToyModelSpec::generate(seed);
        let model = Model::from_archive(&archive, spec.config.clone()).unwrap();
        let img = synth::random_normalized_image(&spec.config, seed.wrapping_add(500));
        let engine = prune::dense_forward(&model, &img).unwrap();
        let reference = oracle::naive_forward(&archive, &spec.config, &img).unwrap();
        assert_eq!(engine.len(), reference.len());
        for (a, b) in engine.iter().zip(&reference) {
            assert!(
                (a - b).abs() < 1e-10,
                "seed {seed}: engine {a} vs oracle {b}"
            );
        }
    }
}

fn schedule_for(seed: u64, depth: usize) -> PruneSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
    let criterion = match rng.gen_range(0..4) {
        0 => Criterion::Shannon,
        1 => Criterion::Renyi {
            alpha: [0.5, 2.0, 5.0, 10.0][rng.gen_range(0..4)],
        },
        2 => Criterion::Evit,
        _ => Criterion::Random { seed: rng.gen() },
    };
    let mut blocks = std::collections::BTreeSet::new();
    for b in 1..=depth {
        if rng.gen_bool(0.5) {
            blocks.insert(b);
        }
    }
    if blocks.is_empty() {
        blocks.insert(1);
    }
    PruneSchedule {
        blocks,
        keep_rate: [0.3, 0.5, 0.7, 0.9][rng.gen_range(0..4)],
        criterion,
        include_class: false,
    }
}

// Replay the engine's kept sets through the scalar oracle: embed, run blocks
// densely, gather exactly the traced subset after each pruning block.
#[test]
fn pruned_forward_agrees_with_dense_on_subset() {
    for seed in 0..100 {
        let (spec, archive) = oracle::ToyModelSpec::generate(seed);
        let config = spec.config.clone();
        let model = Model::from_archive(&archive, config.clone()).unwrap();
        let img = synth::random_normalized_image(&config, seed.wrapping_add(900));
        let schedule = schedule_for(seed, config.depth);

        let (engine_probs, trace) = prune::pruned_forward(&model, &img, &schedule).unwrap();

        let mut tokens = oracle::naive_embed(&archive, &config, &img).unwrap();
        let mut ids: Vec<usize> = (0..config.num_patches()).collect();
        for block in 1..=config.depth {
            tokens = oracle::naive_block_forward(&archive, &config, block - 1, &tokens).unwrap();
            if let Some(event) = trace.events.iter().find(|e| e.block == block) {
                let kept: std::collections::BTreeSet<usize> =
                    event.kept_ids.iter().copied().collect();
                let positions: Vec<usize> = ids
                    .iter()
                    .enumerate()
                    .filter(|(_, id)| kept.contains(id))
                    .map(|(pos, _)| pos)
                    .collect();
                assert_eq!(positions.len(), event.kept_ids.len());
                tokens =
                    oracle::dense_on_subset(&archive, &config, &tokens, &positions, 0..0).unwrap();
                ids.retain(|id| kept.contains(id));
            }
        }
        assert_eq!(tokens.len(), trace.final_tokens);
        let oracle_probs = oracle::naive_classify(&archive, &config, &tokens).unwrap();
        for (a, b) in engine_probs.iter().zip(&oracle_probs) {
            assert!(
                (a - b).abs() < 1e-10,
                "seed {seed}: engine {a} vs oracle {b}"
            );
        }
    }
}

#[test]
fn dense_on_subset_with_all_patches_is_plain_continuation() {
    let (spec, archive) = oracle::ToyModelSpec::generate(17);
    let config = &spec.config;
    let img = synth::random_normalized_image(config, 3);
    let tokens = oracle::naive_embed(&archive, config, &img).unwrap();
    let all: Vec<usize> = (0..config.num_patches()).collect();
    let a = oracle::dense_on_subset(&archive, config, &tokens, &all, 0..config.depth).unwrap();
    let mut b = tokens;
    for blk in 0..config.depth {
        b = oracle::naive_block_forward(&archive, config, blk, &b).unwrap();
    }
    assert_eq!(a.len(), b.len());
    for (ta, tb) in a.iter().zip(&b) {
        for (x, y) in ta.iter().zip(tb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn dense_on_subset_class_only_propagates_one_token() {
    let (spec, archive) = oracle::ToyModelSpec::generate(23);
    let config = &spec.config;
    let img = synth::random_normalized_image(config, 4);
    let tokens = oracle::naive_embed(&archive, config, &img).unwrap();
    let out = oracle::dense_on_subset(&archive, config, &tokens, &[], 0..config.depth).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn entropy_agrees_with_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let m = rng.gen_range(2..64);
        let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(1e-9..1.0f64)).collect();
        let z: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let dist = PatchDistribution::new(probs.clone()).unwrap();
        let fast = entropy::shannon_entropy(&dist);
        let naive = oracle::naive_entropy(&probs, None);
        assert!((fast - naive).abs() < 1e-9);
        for alpha in [0.5, 2.0, 5.0, 10.0] {
            let fast = entropy::renyi_entropy(&dist, alpha).unwrap();
            let naive = oracle::naive_entropy(&probs, Some(alpha));
            assert!((fast - naive).abs() < 1e-9, "alpha {alpha}");
        }
    }
}
