//! Cross-module pipeline checks: archive -> model -> pruned forward ->
//! trace/heatmap artifacts.

use entroprune_core::entropy::Criterion;
use entroprune_core::model::Model;
use entroprune_core::prune::{self, PruneSchedule};
use entroprune_core::weights::WeightArchive;
use entroprune_core::{heatmap, synth};
use proptest::prelude::*;

#[test]
fn full_forward_is_bit_deterministic() {
    let (config, archive) = synth::random_toy(64);
    let bytes = archive.to_bytes();
    let img = synth::random_normalized_image(&config, 5);
    let schedule = PruneSchedule::new(0.5, Criterion::Renyi { alpha: 2.0 }).with_blocks([1]);

    let mut runs = Vec::new();
    for _ in 0..2 {
        // reload everything from bytes each time
        let archive = WeightArchive::from_bytes(&bytes).unwrap();
        let model = Model::from_archive(&archive, config.clone()).unwrap();
        let (probs, trace) = prune::pruned_forward(&model, &img, &schedule).unwrap();
        runs.push((probs, serde_json::to_string(&trace).unwrap()));
    }
    let bits = |ps: &[f64]| ps.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&runs[0].0), bits(&runs[1].0));
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn trace_serializes_with_documented_fields() {
    let (config, archive) = (0..64u64)
        .map(synth::random_toy)
        .find(|(c, _)| c.depth >= 2 && c.num_patches() >= 4)
        .unwrap();
    let model = Model::from_archive(&archive, config.clone()).unwrap();
    let img = synth::random_normalized_image(&config, 8);
    let schedule = PruneSchedule::new(0.5, Criterion::Renyi { alpha: 5.0 }).with_blocks([1]);
    let (_, trace) = prune::pruned_forward(&model, &img, &schedule).unwrap();

    let json: serde_json::Value = serde_json::to_value(&trace).unwrap();
    let event = &json["events"][0];
    for field in ["block", "criterion", "alpha", "kept_ids", "dropped_ids", "scores"] {
        assert!(event.get(field).is_some(), "missing field {field}");
    }
    assert_eq!(event["criterion"].as_str(), Some("renyi"));
    assert_eq!(event["alpha"].as_f64(), Some(5.0));
    assert_eq!(
        event["kept_ids"].as_array().unwrap().len() + event["dropped_ids"].as_array().unwrap().len(),
        event["scores"].as_array().unwrap().len()
    );
}

#[test]
fn heatmap_grid_matches_default_geometry() {
    // 224/16 = 14x14 grid on the DeiT-S default
    let config = entroprune_core::ModelConfig::deit_small();
    let archive = synth::random_archive(&config, 3);
    let model = Model::from_archive(&archive, config.clone()).unwrap();
    let img = synth::random_normalized_image(&config, 4);
    let map = heatmap::entropy_map(&model, &img, &PruneSchedule::dense(), 1, None).unwrap();
    assert_eq!((map.width, map.height), (14, 14));
    assert_eq!(map.pixels.len(), 196);
    let pgm = map.to_pgm();
    assert!(pgm.starts_with(b"P5\n14 14\n255\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // store(load(A)) is byte-identical for every builder-produced archive
    #[test]
    fn archive_round_trip_bytes(seed in any::<u64>()) {
        let (config, archive) = synth::random_toy(seed);
        let bytes = archive.to_bytes();
        let reloaded = WeightArchive::from_bytes(&bytes).unwrap();
        prop_assert_eq!(reloaded.to_bytes(), bytes);
        prop_assert!(reloaded.contains("cls_token"));
        prop_assert_eq!(reloaded.len(), archive.len());
        // widened tensors carry the config geometry
        let m = reloaded
            .get_tensor("pos_embed", &[config.num_tokens(), config.embed_dim])
            .unwrap();
        prop_assert_eq!(m.rows(), config.num_tokens());
    }
}
