//! End-to-end training behaviour on small synthetic datasets.

use demogen_autodiff::check::finite_diff_check;
use demogen_autodiff::Graph;
use demogen_core::labels::Scenario;
use demogen_core::model::config::{ModelConfig, VariantKind};
use demogen_core::model::variants::LatentNoise;
use demogen_core::rng::SeedTree;
use demogen_core::synthworld::dataset::{build_dataset, Dataset};
use demogen_core::training::checkpoint::Checkpoint;
use demogen_core::training::loss::{build_record_loss, loss_eval, LossWeights, RecordScales};
use demogen_core::training::trainer::{train, TrainConfig};
use demogen_core::training::vlb::{vlb_decomposition_check, VLB_TOLERANCE};

fn tiny_dataset(seed: u64) -> Dataset {
    build_dataset(Scenario::Dab, 20, 1, 32, seed).unwrap()
}

fn tiny_config(variant: VariantKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(Scenario::Dab, variant);
    cfg.image_size = 32;
    cfg
}

fn quick_train(variant: VariantKind, weak: bool, epochs: usize, seed: u64) -> demogen_core::training::trainer::TrainOutcome {
    let ds = tiny_dataset(11);
    let tc = TrainConfig {
        epochs,
        batch_size: 8,
        weights: LossWeights::weak(weak),
        seed,
        ..TrainConfig::default()
    };
    train(&ds, tiny_config(variant), &tc, |_| {}).unwrap()
}

#[test]
fn smoke_run_decreases_smoothed_reconstruction() {
    let ds = tiny_dataset(3);
    let tc = TrainConfig {
        epochs: 6,
        batch_size: 8,
        weights: LossWeights::weak(true),
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&ds, tiny_config(VariantKind::Vae), &tc, |_| {}).unwrap();
    let mse: Vec<f64> = out.metrics.iter().map(|m| m.train.mse).collect();
    let head: f64 = mse[..2].iter().sum::<f64>() / 2.0;
    let tail: f64 = mse[mse.len() - 2..].iter().sum::<f64>() / 2.0;
    assert!(
        tail < head,
        "smoothed training MSE should fall: head {head:.4} tail {tail:.4}"
    );
}

#[test]
fn same_seed_reproduces_parameters_bit_for_bit() {
    let a = quick_train(VariantKind::Vae, true, 2, 9);
    let b = quick_train(VariantKind::Vae, true, 2, 9);
    for (x, y) in a
        .checkpoint
        .model
        .params
        .entries()
        .iter()
        .zip(b.checkpoint.model.params.entries())
    {
        assert_eq!(x.value.data(), y.value.data(), "parameter {}", x.name);
    }
}

#[test]
fn gamma_zero_training_ignores_labels_entirely() {
    let ds = tiny_dataset(11);
    let mut stripped = ds.clone();
    for r in &mut stripped.records {
        r.label = None;
    }
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        weights: LossWeights::weak(false),
        seed: 7,
        ..TrainConfig::default()
    };
    let with_labels = train(&ds, tiny_config(VariantKind::Vae), &tc, |_| {}).unwrap();
    let without = train(&stripped, tiny_config(VariantKind::Vae), &tc, |_| {}).unwrap();
    for (x, y) in with_labels
        .checkpoint
        .model
        .params
        .entries()
        .iter()
        .zip(without.checkpoint.model.params.entries())
    {
        assert_eq!(x.value.data(), y.value.data(), "parameter {}", x.name);
    }
}

#[test]
fn validation_records_never_reach_the_optimizer() {
    let out = quick_train(VariantKind::Vae, true, 2, 13);
    let ds = tiny_dataset(11);
    for v in ds.validation_indices() {
        assert!(
            !out.gradient_record_indices.contains(&v),
            "validation record {v} contributed gradients"
        );
    }
    for t in ds.train_indices() {
        assert!(out.gradient_record_indices.contains(&t));
    }
}

#[test]
fn loss_eval_composes_terms_with_the_stated_weights() {
    let ds = tiny_dataset(11);
    let mut rng = SeedTree::new(0).stream("init", &[]);
    let model = demogen_core::model::Model::init(tiny_config(VariantKind::Vae), &mut rng).unwrap();
    let batch: Vec<_> = ds.records.iter().take(4).collect();

    let weak = LossWeights::default();
    let t = loss_eval(&model, &batch, &weak, 0.5, 3).unwrap();
    let recomposed = weak.beta * t.kl + weak.alpha * t.mse + weak.gamma * t.sce;
    assert!((t.total - recomposed).abs() < 1e-9);
    assert!(t.mse > 0.0 && t.kl >= 0.0 && t.sce > 0.0);

    let off = LossWeights::weak(false);
    let t0 = loss_eval(&model, &batch, &off, 0.5, 3).unwrap();
    assert_eq!(t0.sce, 0.0);
    assert!((t0.total - (off.beta * t0.kl + off.alpha * t0.mse)).abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip_is_bit_exact_and_guarded() {
    let out = quick_train(VariantKind::Vae, true, 1, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();

    // identical forward bits
    let ds = tiny_dataset(11);
    let image = &ds.records[0].image;
    let mut s1 = out.checkpoint.model.decoder_session(image).unwrap();
    let mut s2 = loaded.model.decoder_session(image).unwrap();
    let code = vec![0.3f64; out.checkpoint.model.config.code_dim()];
    assert_eq!(s1.decode(&code).unwrap().data(), s2.decode(&code).unwrap().data());

    // save -> load -> save produces identical bytes
    let path2 = dir.path().join("ckpt2");
    loaded.save(&path2).unwrap();
    assert_eq!(
        std::fs::read(path.join("params.bin")).unwrap(),
        std::fs::read(path2.join("params.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read(path.join("manifest.json")).unwrap(),
        std::fs::read(path2.join("manifest.json")).unwrap()
    );

    // truncated blob rejected
    let blob = std::fs::read(path.join("params.bin")).unwrap();
    std::fs::write(path.join("params.bin"), &blob[..blob.len() - 8]).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    std::fs::write(path.join("params.bin"), &blob).unwrap();

    // manifest edited to a wrong shape rejected
    let manifest = std::fs::read_to_string(path.join("manifest.json")).unwrap();
    let hacked = manifest.replacen("[ 4,", "[ 5,", 1);
    let hacked = if hacked == manifest {
        manifest.replacen("4,", "5,", 1)
    } else {
        hacked
    };
    std::fs::write(path.join("manifest.json"), hacked).unwrap();
    assert!(Checkpoint::load(&path).is_err());

    // version bump rejected
    std::fs::write(
        path.join("manifest.json"),
        manifest.replacen("\"format_version\": 1", "\"format_version\": 9", 1),
    )
    .unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn vlb_decomposition_matches_term_by_term() {
    let ds = tiny_dataset(11);
    let mut rng = SeedTree::new(2).stream("init", &[]);
    let model = demogen_core::model::Model::init(tiny_config(VariantKind::Vae), &mut rng).unwrap();
    let batch: Vec<_> = ds.records.iter().take(3).collect();
    let report = vlb_decomposition_check(&model, &batch, 17).unwrap();
    assert!(
        report.max_gap < VLB_TOLERANCE,
        "decomposition gap {}",
        report.max_gap
    );
    for r in &report.records {
        assert!(r.kl_graph >= 0.0);
    }

    // stripping labels zeroes the label-likelihood term
    let mut unlabelled = ds.records[0].clone();
    unlabelled.label = None;
    let report = vlb_decomposition_check(&model, &[&unlabelled], 17).unwrap();
    assert_eq!(report.records[0].sce_graph, 0.0);
    assert_eq!(report.records[0].sce_direct, 0.0);

    // wrong variant is a configuration error
    let mut rng = SeedTree::new(2).stream("init", &[]);
    let gs = demogen_core::model::Model::init(tiny_config(VariantKind::Gs), &mut rng).unwrap();
    assert!(vlb_decomposition_check(&gs, &batch, 17).is_err());
}

#[test]
fn full_loss_gradient_matches_finite_differences_for_every_variant() {
    let ds = tiny_dataset(11);
    let record = &ds.records[0];
    for variant in [VariantKind::Vae, VariantKind::Aae, VariantKind::Gs] {
        let mut rng = SeedTree::new(4).stream("init", &[]);
        let model = demogen_core::model::Model::init(tiny_config(variant), &mut rng).unwrap();
        let mut graph = Graph::<f64>::new();
        let mut noise_rng = SeedTree::new(5).stream("noise", &[]);
        let noise = LatentNoise::<f64>::draw(&model.config, &mut noise_rng);
        let scales = RecordScales {
            alpha: 1.0,
            beta: 0.1,
            gamma: 10.0,
        };
        let nodes = build_record_loss(&mut graph, &model, record, &noise, 0.7, &scales).unwrap();
        // probe a spread of parameters across subsystems
        let probes: Vec<_> = nodes
            .used_params
            .iter()
            .step_by(7)
            .map(|&(_, leaf)| leaf)
            .collect();
        let mut rng = SeedTree::new(6).stream("fd", &[]);
        let report =
            finite_diff_check(&mut graph, nodes.total, &probes, 3e-5, 3, &mut rng).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "variant {variant:?}: rel err {}",
            report.max_rel_err
        );
    }
}
