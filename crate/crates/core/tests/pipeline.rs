use std::collections::HashSet;

use kdcn::dataset::{
    apply_mask_pattern, generate_synthetic, load_dataset, make_splits, masked_count, materialize_modalities,
    write_entities, write_posts, Channels, MaskPattern, SplitRatio, SyntheticSpec,
};
use kdcn::model::{evaluate, load_checkpoint, save_checkpoint, train, Ablation, HyperParams, ModelParams, TrainConfig};
use proptest::prelude::*;

fn spec(n_posts: usize, channels: Channels, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_posts,
        channels,
        seed,
        ..SyntheticSpec::default()
    }
}

fn small_hyper(vocab: usize, d_i: usize) -> HyperParams {
    HyperParams {
        d_w: 8,
        d0: 8,
        d: 16,
        d_u: 8,
        ..HyperParams::new(vocab, d_i)
    }
}

#[test]
fn files_round_trip_through_the_loader() {
    let s = spec(60, Channels::Both, 11);
    let (posts, table) = generate_synthetic(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p, e) = (dir.path().join("posts.jsonl"), dir.path().join("entities.tsv"));
    write_posts(&p, &posts).unwrap();
    write_entities(&e, &table).unwrap();

    let loaded = load_dataset(&p, &e).unwrap();
    assert_eq!(loaded.rejected, 0);
    assert_eq!(loaded.entities, table);
    assert_eq!(loaded.posts, posts);
}

#[test]
fn train_evaluate_and_restore() {
    let s = spec(120, Channels::Both, 2);
    let (mut posts, table) = generate_synthetic(&s).unwrap();
    materialize_modalities(&mut posts, s.d_i);
    let split = make_splits(&posts, SplitRatio::default(), 1, 2).unwrap().remove(0);

    let model = ModelParams::init(small_hyper(s.vocab, s.d_i), Ablation::default(), 2).unwrap();
    let prep = |p| model.prepare(p, &table).unwrap();
    let (tr, va, te) = (prep(&split.train), prep(&split.val), prep(&split.test));
    let cfg = TrainConfig {
        lr: 0.005,
        batch_size: 16,
        max_epochs: 15,
        seed: 2,
        ..TrainConfig::default()
    };
    let (trained, history) = train(&cfg, model, &tr, &va).unwrap();
    assert!(!history.epochs.is_empty());
    let m = evaluate(&trained, &te).unwrap();
    assert!(m.accuracy > 0.7, "test accuracy {}", m.accuracy);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&path, &trained, Some(&cfg)).unwrap();
    let (restored, restored_cfg) = load_checkpoint(&path).unwrap();
    assert_eq!(restored_cfg, Some(cfg));
    assert_eq!(restored.predict(&te).unwrap(), trained.predict(&te).unwrap());
}

#[test]
fn no_visual_ignores_the_image() {
    let s = spec(20, Channels::CrossModal, 4);
    let (mut posts, table) = generate_synthetic(&s).unwrap();
    let model = ModelParams::init(small_hyper(s.vocab, s.d_i), "no_visual".parse().unwrap(), 4).unwrap();
    let before = model.predict(&model.prepare(&posts, &table).unwrap()).unwrap();
    for p in &mut posts {
        p.image_features = None;
        p.cmt = false;
    }
    materialize_modalities(&mut posts, s.d_i);
    let after = model.predict(&model.prepare(&posts, &table).unwrap()).unwrap();
    assert_eq!(before, after);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_every_fold(n in 10usize..200, folds in 1usize..8, seed in any::<u64>()) {
        let (posts, _) = generate_synthetic(&spec(n, Channels::Knowledge, 0)).unwrap();
        let splits = make_splits(&posts, SplitRatio::default(), folds, seed).unwrap();
        prop_assert_eq!(splits.len(), folds);
        let all: HashSet<&str> = posts.iter().map(|p| p.id.as_str()).collect();
        let mut tests_seen = HashSet::new();
        for s in &splits {
            let ids: Vec<&str> = s.train.iter().chain(&s.val).chain(&s.test).map(|p| p.id.as_str()).collect();
            prop_assert_eq!(ids.len(), n);
            prop_assert_eq!(ids.iter().copied().collect::<HashSet<_>>(), all.clone());
            prop_assert!((s.test.len() as f64 - n as f64 * 0.2).abs() <= 1.0);
            prop_assert!((s.val.len() as f64 - n as f64 * 0.2).abs() <= 1.0);
            tests_seen.extend(s.test.iter().map(|p| p.id.clone()));
        }
        if folds == 5 {
            prop_assert_eq!(tests_seen.len(), n);
        }
    }

    #[test]
    fn masking_keeps_the_requested_share(
        eta in (0u32..=5).prop_map(|v| v * 20),
        mu in (0u32..=5).prop_map(|v| v * 20),
        seed in any::<u64>(),
    ) {
        let (posts, _) = generate_synthetic(&spec(50, Channels::CrossModal, 1)).unwrap();
        let split = make_splits(&posts, SplitRatio::default(), 1, 1).unwrap().remove(0);
        let sizes = [split.train.len(), split.val.len(), split.test.len()];
        let masked = apply_mask_pattern(split, MaskPattern::new(eta, mu, seed).unwrap()).unwrap();
        let parts = [&masked.train, &masked.val, &masked.test];
        for (i, (part, size)) in parts.iter().zip(sizes).enumerate() {
            let keep = if i == 2 { mu } else { eta };
            let stripped = part.iter().filter(|p| p.image_features.is_none()).count();
            prop_assert_eq!(stripped, masked_count(size, keep));
            prop_assert!(part.iter().all(|p| p.cmt == p.image_features.is_some()));
        }
    }
}
