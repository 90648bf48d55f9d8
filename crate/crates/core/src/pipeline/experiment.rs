//! Desk-scale end-to-end run: synthetic shapes, V-CNN I and the multi-view
//! net trained from scratch, fusion weights fit on a held-out split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::cache::{load_samples, prepare_caches, PrepConfig, SampleKind, SampleSet};
use super::dataset::{holdout_split, make_synthetic_dataset, DatasetManifest, ShapeKind, Split, MANIFEST_FILE};
use super::eval::{evaluate, EvalSummary, Evaluation};
use super::fusion::{fit_fusion_weights, fuse_scores, FusionWeights, ScoreTransform, DEFAULT_GRID_STEP};
use super::train::{train, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::models::{build_mvnet, vcnn1_with, NetworkSpec, Vcnn1Config};
use crate::nn::weights::Record;
use crate::nn::OptimizerConfig;
use crate::util::derive_seed;

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub kinds: Vec<ShapeKind>,
    pub per_class: usize,
    pub prep: PrepConfig,
    /// Seeds dataset generation and the fusion hold-out split.
    pub data_seed: u64,
    pub holdout: f64,
    pub vcnn: TrainConfig,
    pub mvnet: TrainConfig,
    pub grid_step: f64,
    pub work_dir: PathBuf,
}

impl DeskConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        let sgd = |lr| OptimizerConfig { learning_rate: lr, momentum: 0.9, weight_decay: 5e-4, seed: 0 };
        DeskConfig {
            kinds: ShapeKind::ALL[..4].to_vec(),
            per_class: 50,
            prep: PrepConfig { orientations: 12, resolution: 30, image_size: 64, ..PrepConfig::default() },
            data_seed: 0,
            holdout: 0.2,
            vcnn: TrainConfig { epochs: 4, batch_size: 32, optimizer: sgd(0.01), lr_step: 3, ..TrainConfig::default() },
            mvnet: TrainConfig {
                epochs: 4,
                batch_size: 32,
                optimizer: sgd(0.01),
                lr_step: 3,
                ..TrainConfig::default()
            },
            grid_step: DEFAULT_GRID_STEP,
            work_dir: work_dir.into(),
        }
    }
}

/// Cached samples of the synthetic dataset, split three ways.
pub struct DeskData {
    pub manifest: DatasetManifest,
    pub voxels: [SampleSet; 3],
    pub views: [SampleSet; 3],
}

pub const TRAIN: usize = 0;
pub const VAL: usize = 1;
pub const TEST: usize = 2;

impl DeskData {
    /// Generates (or reuses) the dataset and caches under the work directory.
    pub fn prepare(cfg: &DeskConfig) -> Result<Self> {
        let data_dir = cfg.work_dir.join("data");
        let manifest_path = data_dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            DatasetManifest::load(&manifest_path)?
        } else {
            make_synthetic_dataset(&cfg.kinds, cfg.per_class, cfg.data_seed, &data_dir)?
        };
        let cache = cfg.work_dir.join("cache");
        let prep = PrepConfig { seed: cfg.data_seed, ..cfg.prep.clone() };
        let report = prepare_caches(&manifest, &data_dir, &cache, &prep)?;
        if !report.failures.is_empty() {
            return Err(Error::Dataset(report.failures.join("; ")));
        }
        let (train, val) = holdout_split(&manifest, cfg.holdout, cfg.data_seed)?;
        let test: Vec<_> = manifest.split(Split::Test).into_iter().cloned().collect();
        let load = |kind| -> Result<[SampleSet; 3]> {
            Ok([
                load_samples(&manifest, &train, &cache, &prep, kind)?,
                load_samples(&manifest, &val, &cache, &prep, kind)?,
                load_samples(&manifest, &test, &cache, &prep, kind)?,
            ])
        };
        Ok(DeskData { voxels: load(SampleKind::Voxels)?, views: load(SampleKind::Views)?, manifest })
    }

    pub fn labels(&self, split: usize) -> BTreeMap<String, usize> {
        let s = &self.voxels[split];
        s.model_ids.iter().cloned().zip(s.labels.iter().copied()).collect()
    }
}

pub struct ComponentOutcome {
    pub spec: NetworkSpec,
    pub log: TrainLog,
    pub weights: Vec<Record>,
    pub val: Evaluation,
    pub test: Evaluation,
}

pub struct DeskOutcome {
    pub seed: u64,
    pub components: Vec<ComponentOutcome>,
    pub fusion: FusionWeights,
    pub fused_val: f64,
    pub fused_test: EvalSummary,
}

impl DeskOutcome {
    /// Deterministic text summary (no timings).
    pub fn metric_report(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for c in &self.components {
            let losses: Vec<String> = c.log.rows.iter().map(|r| format!("{:.6}", r.loss)).collect();
            let _ = writeln!(
                out,
                "{} val {:.6} test {:.6} losses [{}]",
                c.spec.name,
                c.val.summary.metric,
                c.test.summary.metric,
                losses.join(", ")
            );
            let _ = writeln!(out, "{} confusion {:?}", c.spec.name, c.test.summary.confusion);
        }
        let _ = writeln!(out, "fusion weights {:?} over {:?}", self.fusion.weights, self.fusion.components);
        let _ = writeln!(out, "fusionnet val {:.6} test {:.6}", self.fused_val, self.fused_test.metric);
        let _ = writeln!(out, "fusionnet confusion {:?}", self.fused_test.confusion);
        out
    }

    pub fn component(&self, name: &str) -> Option<&ComponentOutcome> {
        self.components.iter().find(|c| c.spec.name == name)
    }
}

pub fn train_component(
    spec: &NetworkSpec,
    sets: &[SampleSet; 3],
    classes: &[String],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ComponentOutcome> {
    let mut net = spec.instantiate::<f32>(derive_seed(seed, &format!("{}/init", spec.name)))?;
    let mut cfg = cfg.clone();
    cfg.optimizer.seed = derive_seed(seed, &format!("{}/sgd", spec.name));
    let log = train(&mut net, &sets[TRAIN], &cfg, &mut ())?;
    let val = evaluate(&mut net, &sets[VAL], classes, &spec.name)?;
    let test = evaluate(&mut net, &sets[TEST], classes, &spec.name)?;
    Ok(ComponentOutcome { spec: spec.clone(), log, weights: net.to_records(), val, test })
}

/// One full training/fusion run with training seed `seed`.
pub fn run_desk_seed(data: &DeskData, cfg: &DeskConfig, seed: u64) -> Result<DeskOutcome> {
    let classes = &data.manifest.classes;
    let k = classes.len();
    let vcnn = vcnn1_with(Vcnn1Config { resolution: cfg.prep.resolution, ..Vcnn1Config::new(k) });
    let mv = build_mvnet(k, cfg.prep.image_size)?;
    let components = vec![
        train_component(&vcnn, &data.voxels, classes, &cfg.vcnn, seed)?,
        train_component(&mv, &data.views, classes, &cfg.mvnet, seed)?,
    ];
    fuse_components(data, cfg, seed, components)
}

fn fuse_components(
    data: &DeskData,
    cfg: &DeskConfig,
    seed: u64,
    components: Vec<ComponentOutcome>,
) -> Result<DeskOutcome> {
    let classes = &data.manifest.classes;
    let names: Vec<String> = components.iter().map(|c| c.spec.name.clone()).collect();
    let val_scores: Vec<_> = components.iter().map(|c| c.val.scores.clone()).collect();
    let (fusion, fused_val) =
        fit_fusion_weights(&names, &val_scores, &data.labels(VAL), classes.len(), cfg.grid_step, ScoreTransform::Raw)?;
    let test_scores: Vec<_> = components.iter().map(|c| c.test.scores.clone()).collect();
    let preds = fuse_scores(&test_scores, &fusion, ScoreTransform::Raw)?;
    let truth = data.labels(TEST);
    let labels: Vec<usize> = preds.iter().map(|(id, _)| truth[id]).collect();
    let predicted: Vec<usize> = preds.iter().map(|p| p.1).collect();
    let views = components.iter().map(|c| c.test.summary.views[0]).collect();
    let fused_test = EvalSummary::from_predictions("fusionnet", views, classes, &predicted, &labels)?;
    Ok(DeskOutcome { seed, components, fusion, fused_val, fused_test })
}
