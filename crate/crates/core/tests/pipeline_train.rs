use std::path::Path;

use fusionnet::models::{adapt_head, vcnn1_with, Vcnn1Config};
use fusionnet::nn::OptimizerConfig;
use fusionnet::pipeline::eval::{average_per_class_accuracy, confusion_matrix, evaluate};
use fusionnet::pipeline::{
    load_samples, make_synthetic_dataset, prepare_caches, train, DatasetManifest, PrepConfig, SampleKind, SampleSet,
    ShapeKind, Split, TrainConfig,
};

const RES: usize = 16;

fn dataset(dir: &Path, kinds: &[ShapeKind], per_class: usize, orientations: usize) -> (DatasetManifest, PrepConfig) {
    let m = make_synthetic_dataset(kinds, per_class, 5, dir).unwrap();
    let cfg = PrepConfig { orientations, resolution: RES, image_size: 32, views: false, ..PrepConfig::default() };
    let report = prepare_caches(&m, dir, &dir.join("cache"), &cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    (m, cfg)
}

fn voxels(dir: &Path, m: &DatasetManifest, cfg: &PrepConfig, split: Split) -> SampleSet {
    let entries: Vec<_> = m.split(split).into_iter().cloned().collect();
    load_samples(m, &entries, &dir.join("cache"), cfg, SampleKind::Voxels).unwrap()
}

fn small_vcnn(classes: usize) -> fusionnet::NetworkSpec {
    vcnn1_with(Vcnn1Config { resolution: RES, filters: 16, hidden: 64, class_count: classes })
}

fn train_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        optimizer: OptimizerConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 5e-4, seed },
        lr_step: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_is_finite_and_drops_early() {
    let dir = tempfile::tempdir().unwrap();
    // 10 models: 5 classes x 2, one train and one test each
    let (m, cfg) = dataset(dir.path(), &ShapeKind::ALL, 2, 4);
    assert_eq!(m.entries.len(), 10);
    let set = voxels(dir.path(), &m, &cfg, Split::Train);
    let mut net = small_vcnn(5).instantiate::<f32>(1).unwrap();
    let log = train(&mut net, &set, &train_cfg(3, 1), &mut ()).unwrap();
    assert!(log.initial_loss.is_finite());
    assert!(log.rows.iter().all(|r| r.loss.is_finite()));
    assert!(log.rows.iter().any(|r| r.loss < log.initial_loss), "{log:?}");
    assert!(log.to_csv().starts_with("epoch,loss,train_metric,wall_seconds\n1,"));
}

#[test]
fn fine_tuning_leaves_frozen_layers_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = dataset(dir.path(), &ShapeKind::ALL[..3], 3, 2);
    let set = voxels(dir.path(), &m, &cfg, Split::Train);
    let spec = small_vcnn(4);
    let source = spec.instantiate::<f32>(3).unwrap();
    let (mut spec3, mut net) = adapt_head::<f32>(&spec, &source.to_records(), 3, 4).unwrap();
    spec3.freeze_below = Some(8);
    net.set_freeze_below(spec3.freeze_below);
    let before = net.to_records();
    train(&mut net, &set, &train_cfg(2, 2), &mut ()).unwrap();
    for (a, b) in before.iter().zip(net.to_records()) {
        let layer: usize = a.name.split('.').next().unwrap().parse().unwrap();
        assert_eq!(a.values == b.values, layer < 8, "{}", a.name);
    }
}

#[test]
fn vcnn1_fits_four_synthetic_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = dataset(dir.path(), &ShapeKind::ALL[..4], 10, 6);
    let set = voxels(dir.path(), &m, &cfg, Split::Train);
    let spec = vcnn1_with(Vcnn1Config { resolution: RES, ..Vcnn1Config::new(4) });
    let mut net = spec.instantiate::<f32>(7).unwrap();
    let mut cfg = TrainConfig { lr_step: 20, ..train_cfg(30, 7) };
    cfg.optimizer.learning_rate = 0.001;
    let log = train(&mut net, &set, &cfg, &mut ()).unwrap();
    let last = log.rows.last().unwrap();
    assert!(last.train_metric >= 0.99, "{:?}", log.rows);
}

#[test]
fn evaluation_is_reproducible_and_matches_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = dataset(dir.path(), &ShapeKind::ALL[..2], 5, 3);
    let train_set = voxels(dir.path(), &m, &cfg, Split::Train);
    let test_set = voxels(dir.path(), &m, &cfg, Split::Test);
    let run = || {
        let mut net = small_vcnn(2).instantiate::<f32>(11).unwrap();
        let log = train(&mut net, &train_set, &train_cfg(2, 11), &mut ()).unwrap();
        let ev = evaluate(&mut net, &test_set, &m.classes, "vcnn1").unwrap();
        (log.rows.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>(), ev)
    };
    let (la, a) = run();
    let (lb, b) = run();
    assert_eq!(la, lb);
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.scores.len(), test_set.objects());
    let preds: Vec<usize> = a.scores.iter().map(|s| fusionnet::pipeline::eval::argmax(&s.scores)).collect();
    let brute = average_per_class_accuracy(&confusion_matrix(&preds, &test_set.labels, 2).unwrap());
    assert_eq!(a.summary.metric, brute);
}

#[test]
fn shape_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = dataset(dir.path(), &ShapeKind::ALL[..2], 2, 1);
    let set = voxels(dir.path(), &m, &cfg, Split::Train);
    let mut net = vcnn1_with(Vcnn1Config { resolution: 18, filters: 4, hidden: 8, class_count: 2 })
        .instantiate::<f32>(0)
        .unwrap();
    let err = train(&mut net, &set, &train_cfg(1, 0), &mut ()).unwrap_err();
    assert!(matches!(err, fusionnet::Error::Shape(_)), "{err}");
}

#[test]
#[ignore = "needs FUSIONNET_MODELNET40 / FUSIONNET_MODELNET10 pointing at the datasets"]
fn modelnet_counts() {
    use fusionnet::pipeline::ingest_modelnet;
    for (var, classes, train, test) in
        [("FUSIONNET_MODELNET40", 40, 9843, 2468), ("FUSIONNET_MODELNET10", 10, 3991, 908)]
    {
        if let Some(root) = std::env::var_os(var) {
            let m = ingest_modelnet(Path::new(&root)).unwrap();
            assert_eq!((m.classes.len(), m.count(Split::Train), m.count(Split::Test)), (classes, train, test));
        }
    }
}
