//! Command-line front end: one subcommand per pipeline stage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradcheck;
use crate::models::{adapt_head, build, Architecture, ClassScores, NetworkSpec};
use crate::nn::weights;
use crate::nn::{Network, OptimizerConfig};
use crate::pipeline::dataset::{holdout_split, parse_synthetic_spec, MANIFEST_FILE};
use crate::pipeline::eval::{evaluate, scores_from_jsonl, scores_to_jsonl, EvalSummary};
use crate::pipeline::fusion::{fit_fusion_weights, fuse_scores, FusionWeights, ScoreTransform};
use crate::pipeline::report::{load_summaries, render_table, save_summary};
use crate::pipeline::{
    ingest_modelnet, load_samples, make_synthetic_dataset, prepare_caches, write_atomic, DatasetEntry, DatasetManifest,
    EpochRow, PrepConfig, SampleKind, Split, TrainConfig, TrainObserver,
};

pub const CACHE_ENV: &str = "FUSIONNET_CACHE";

#[derive(Debug, Parser)]
#[command(name = "fusionnet", version, about = "Voxel and multi-view CNN fusion for 3D shape classification")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural shape dataset and its manifest
    Synth(RunArgs),
    /// Build a manifest from a ModelNet directory (--data)
    Ingest(RunArgs),
    /// Voxelize every orientation and render every view into the cache
    Prep {
        #[command(flatten)]
        run: RunArgs,
        /// Gaussian vertex jitter (mesh units) before voxelizing
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Train one network on the cached training split
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        net: NetArgs,
        /// Initialize from a trained run directory, re-targeting its head
        #[arg(long)]
        finetune_from: Option<PathBuf>,
        /// Keep layers below this index fixed
        #[arg(long)]
        freeze_below: Option<usize>,
    },
    /// Score a trained network on the hold-out and test splits
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Fit fusion weights on hold-out scores and apply them to test scores
    Fuse {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated run names
        #[arg(long, value_delimiter = ',', default_value = "vcnn1,vcnn1_jitter,vcnn2,mvnet")]
        components: Vec<String>,
        /// Simplex grid spacing
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Fuse softmax probabilities instead of raw scores
        #[arg(long)]
        softmax: bool,
    },
    /// Finite-difference check of every layer's backward pass
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        /// Random seeds per case
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Table of every stored evaluation result
    Report(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// ModelNet root (class/train/*.off, class/test/*.off)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic dataset as CLASSESxN, CLASSES a count or comma list of box, sphere, pyramid, cylinder, torus
    #[arg(long, default_value = "4x50")]
    pub synthetic: String,
    /// Manifest file [default: <out>/manifest.jsonl]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Voxel orientations per model
    #[arg(long, default_value_t = 60)]
    pub orientations: usize,
    /// Voxel grid resolution
    #[arg(long, default_value_t = 30)]
    pub resolution: usize,
    /// Rendered view size in pixels
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Epochs between learning-rate drops by 10x (0 disables)
    #[arg(long, default_value_t = 20)]
    pub lr_step: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    /// Fraction of training models held out for fusion weights
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory
    #[arg(long, default_value = "fusionnet-out")]
    pub out: PathBuf,
    /// Flat key = value file; command-line flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// vcnn1, vcnn2 or mvnet
    #[arg(long, default_value = "vcnn1")]
    pub net: String,
    /// Run name [default: network name, with _jitter for jittered caches]
    #[arg(long)]
    pub name: Option<String>,
    /// Train on caches built with this vertex jitter
    #[arg(long)]
    pub jitter: Option<f64>,
}

impl RunArgs {
    fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join(MANIFEST_FILE))
    }

    fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| self.out.join("cache"))
    }

    fn results_dir(&self) -> PathBuf {
        self.out.join("results")
    }

    fn prep_config(&self, jitter: Option<f64>) -> PrepConfig {
        PrepConfig {
            orientations: self.orientations,
            resolution: self.resolution,
            image_size: self.image_size,
            seed: self.seed,
            jitter,
            voxels: true,
            views: true,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: OptimizerConfig {
                learning_rate: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                seed: self.seed,
            },
            lr_step: self.lr_step,
            lr_gamma: 0.1,
            checks_per_epoch: 1,
        }
    }

    fn load_manifest(&self) -> Result<(DatasetManifest, PathBuf)> {
        let path = self.manifest_path();
        if !path.is_file() {
            return Err(Error::NotFound(format!("manifest not found: {}", path.display())));
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((DatasetManifest::load(&path)?, dir))
    }
}

impl NetArgs {
    fn arch(&self) -> Result<Architecture> {
        self.net.parse()
    }

    fn run_name(&self) -> Result<String> {
        if let Some(n) = &self.name {
            if n.is_empty() || n.contains(['/', '\\']) {
                return Err(Error::InvalidArgument(format!("bad run name {n:?}")));
            }
            return Ok(n.clone());
        }
        let base = self.arch()?.name();
        Ok(if self.jitter.is_some() { format!("{base}_jitter") } else { base.to_string() })
    }
}

impl Command {
    fn run_args(&self) -> &RunArgs {
        match self {
            Command::Synth(r) | Command::Ingest(r) | Command::Report(r) => r,
            Command::Prep { run, .. }
            | Command::Train { run, .. }
            | Command::Eval { run, .. }
            | Command::Fuse { run, .. }
            | Command::Gradcheck { run, .. } => run,
        }
    }
}

/// Reads a flat `key = value` file (`#` starts a comment) into
/// `--key=value` arguments.
pub fn config_file_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Error::InvalidArgument(format!("config line {}: bad key {:?}", i + 1, k.trim())));
        }
        let value = v.trim();
        if matches!(value, "true" | "false") && key == "softmax" {
            if value == "true" {
                out.push(OsString::from("--softmax"));
            }
            continue;
        }
        out.push(OsString::from(format!("--{key}={value}")));
    }
    Ok(out)
}

const SUBCOMMANDS: [&str; 8] = ["synth", "ingest", "prep", "train", "eval", "fuse", "gradcheck", "report"];

/// Splices config-file values in right after the subcommand, so later
/// (command-line) occurrences override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = config else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("config file not found: {}", path.display())),
        _ => Error::io(&path, e),
    })?;
    let extra = config_file_args(&text)?;
    let at = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()));
    let Some(at) = at else { return Ok(args) };
    let mut out = args[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

/// Parses `args` (including the program name) and runs the command. Usage
/// errors are printed by clap and exit with its code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = cli.command.run_args().jobs;
    if jobs > 0 {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Synth(run) => synth(&run),
        Command::Ingest(run) => ingest(&run),
        Command::Prep { run, jitter } => prep(&run, jitter),
        Command::Train { run, net, finetune_from, freeze_below } => {
            train_cmd(&run, &net, finetune_from.as_deref(), freeze_below)
        }
        Command::Eval { run, net } => eval_cmd(&run, &net),
        Command::Fuse { run, components, step, softmax } => fuse_cmd(&run, &components, step, softmax),
        Command::Gradcheck { run, seeds } => gradcheck_cmd(&run, seeds),
        Command::Report(run) => report_cmd(&run),
    }
}

fn synth(run: &RunArgs) -> Result<()> {
    let (kinds, per_class) = parse_synthetic_spec(&run.synthetic)?;
    let m = make_synthetic_dataset(&kinds, per_class, run.seed, &run.out)?;
    println!(
        "wrote {} ({} classes, {} train, {} test)",
        run.out.join(MANIFEST_FILE).display(),
        m.classes.len(),
        m.count(Split::Train),
        m.count(Split::Test)
    );
    Ok(())
}

fn ingest(run: &RunArgs) -> Result<()> {
    let root = run.data.as_ref().ok_or_else(|| Error::InvalidArgument("ingest needs --data".into()))?;
    let m = ingest_modelnet(root)?;
    let path = run.manifest_path();
    m.save(&path)?;
    println!(
        "wrote {} ({} classes, {} train, {} test)",
        path.display(),
        m.classes.len(),
        m.count(Split::Train),
        m.count(Split::Test)
    );
    Ok(())
}

fn prep(run: &RunArgs, jitter: Option<f64>) -> Result<()> {
    let (m, dir) = run.load_manifest()?;
    let cfg = run.prep_config(jitter);
    let report = prepare_caches(&m, &dir, &run.cache_dir(), &cfg)?;
    println!(
        "cache {}: {} written, {} already valid, {} regenerated",
        run.cache_dir().display(),
        report.written,
        report.skipped,
        report.regenerated
    );
    if !report.failures.is_empty() {
        return Err(Error::Dataset(format!(
            "{} models failed:\n  {}",
            report.failures.len(),
            report.failures.join("\n  ")
        )));
    }
    Ok(())
}

struct Splits {
    manifest: DatasetManifest,
    train: Vec<DatasetEntry>,
    holdout: Vec<DatasetEntry>,
    test: Vec<DatasetEntry>,
}

fn splits(run: &RunArgs) -> Result<Splits> {
    let (manifest, _) = run.load_manifest()?;
    let (train, holdout) = holdout_split(&manifest, run.holdout, run.seed)?;
    let test = manifest.split(Split::Test).into_iter().cloned().collect();
    Ok(Splits { manifest, train, holdout, test })
}

fn run_dir(run: &RunArgs, name: &str) -> PathBuf {
    run.out.join("runs").join(name)
}

fn read_spec(dir: &Path) -> Result<NetworkSpec> {
    let path = dir.join("spec.json");
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("no trained network at {}", dir.display())),
        _ => Error::io(&path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("{} not found", path.display())),
        _ => Error::io(path, e),
    })
}

fn sample_kind(spec: &NetworkSpec) -> SampleKind {
    if spec.name == Architecture::Mvnet.name() {
        SampleKind::Views
    } else {
        SampleKind::Voxels
    }
}

struct Checkpoints {
    dir: PathBuf,
}

impl TrainObserver for Checkpoints {
    fn on_epoch(&mut self, net: &Network<f32>, row: &EpochRow) -> crate::error::Result<()> {
        write_atomic(&self.dir.join(format!("epoch_{:03}.fnw", row.epoch)), &net.save_weights())?;
        println!(
            "epoch {:>3}  loss {:.5}  train metric {:.4}  {:.1}s",
            row.epoch, row.loss, row.train_metric, row.wall_seconds
        );
        Ok(())
    }
}

fn train_cmd(
    run: &RunArgs,
    net_args: &NetArgs,
    finetune_from: Option<&Path>,
    freeze_below: Option<usize>,
) -> Result<()> {
    let name = net_args.run_name()?;
    let arch = net_args.arch()?;
    let s = splits(run)?;
    let k = s.manifest.classes.len();
    let (mut spec, mut net) = match finetune_from {
        Some(src) => {
            let source = read_spec(src)?;
            let records = weights::decode(&read_file(&src.join("weights.fnw"))?)?;
            adapt_head::<f32>(&source, &records, k, run.seed)?
        }
        None => {
            let spec = build(arch, k, run.resolution, run.image_size)?;
            let net = spec.instantiate::<f32>(run.seed)?;
            (spec, net)
        }
    };
    if freeze_below.is_some() {
        spec.freeze_below = freeze_below;
        spec.validate()?;
        net.set_freeze_below(freeze_below);
    }
    let kind = sample_kind(&spec);
    let cfg = run.prep_config(net_args.jitter);
    let samples = load_samples(&s.manifest, &s.train, &run.cache_dir(), &cfg, kind)?;
    let dir = run_dir(run, &name);
    write_atomic(&dir.join("spec.json"), (serde_json::to_string_pretty(&spec)? + "\n").as_bytes())?;
    write_atomic(&dir.join("architecture.txt"), spec.to_manifest()?.as_bytes())?;
    write_atomic(
        &dir.join("run.json"),
        (serde_json::to_string_pretty(&RunRecord::new(run, net_args))? + "\n").as_bytes(),
    )?;
    println!("training {name}: {} samples, {} parameters", samples.len(), net.param_count());
    let mut observer = Checkpoints { dir: dir.join("checkpoints") };
    let log = crate::pipeline::train(&mut net, &samples, &run.train_config(), &mut observer)?;
    write_atomic(&dir.join("log.csv"), log.to_csv().as_bytes())?;
    write_atomic(&dir.join("weights.fnw"), &net.save_weights())?;
    println!("wrote {}", dir.display());
    Ok(())
}

/// Cache settings a run was trained with, reused by evaluation.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct RunRecord {
    orientations: usize,
    resolution: usize,
    image_size: usize,
    seed: u64,
    jitter: Option<f64>,
    holdout: f64,
}

impl RunRecord {
    fn new(run: &RunArgs, net: &NetArgs) -> Self {
        RunRecord {
            orientations: run.orientations,
            resolution: run.resolution,
            image_size: run.image_size,
            seed: run.seed,
            jitter: net.jitter,
            holdout: run.holdout,
        }
    }
}

fn eval_cmd(run: &RunArgs, net_args: &NetArgs) -> Result<()> {
    let name = net_args.run_name()?;
    let dir = run_dir(run, &name);
    let spec = read_spec(&dir)?;
    let mut net = spec.instantiate::<f32>(0)?;
    net.load_weights(&read_file(&dir.join("weights.fnw"))?)?;
    let s = splits(run)?;
    let kind = sample_kind(&spec);
    // jitter only augments training; evaluation always uses clean caches
    let cfg = run.prep_config(None);
    let cache = run.cache_dir();
    for e in &s.test {
        if !s.train.iter().any(|t| t.label == e.label) {
            return Err(Error::Dataset(format!("class {} appears in test but not in training", e.label)));
        }
    }
    let test = load_samples(&s.manifest, &s.test, &cache, &cfg, kind)?;
    let results = run.results_dir();
    if !s.holdout.is_empty() {
        let holdout = load_samples(&s.manifest, &s.holdout, &cache, &cfg, kind)?;
        let ev = evaluate(&mut net, &holdout, &s.manifest.classes, &name)?;
        write_atomic(&results.join(format!("scores_{name}_holdout.jsonl")), scores_to_jsonl(&ev.scores).as_bytes())?;
        println!("hold-out average per-class accuracy {:.4}", ev.summary.metric);
    }
    let ev = evaluate(&mut net, &test, &s.manifest.classes, &name)?;
    write_atomic(&results.join(format!("scores_{name}_test.jsonl")), scores_to_jsonl(&ev.scores).as_bytes())?;
    save_summary(&results, &ev.summary)?;
    print!("{}", ev.summary.per_class_table());
    Ok(())
}

fn read_scores(results: &Path, name: &str, split: &str) -> Result<Vec<ClassScores>> {
    let path = results.join(format!("scores_{name}_{split}.jsonl"));
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("no {split} scores for {name} (run eval first)")),
        _ => Error::io(&path, e),
    })?;
    scores_from_jsonl(&text)
}

fn fuse_cmd(run: &RunArgs, components: &[String], step: f64, softmax: bool) -> Result<()> {
    let results = run.results_dir();
    let s = splits(run)?;
    let transform = if softmax { ScoreTransform::Softmax } else { ScoreTransform::Raw };
    let holdout: Vec<Vec<ClassScores>> =
        components.iter().map(|c| read_scores(&results, c, "holdout")).collect::<Result<_>>()?;
    let test: Vec<Vec<ClassScores>> =
        components.iter().map(|c| read_scores(&results, c, "test")).collect::<Result<_>>()?;
    let labels: BTreeMap<String, usize> =
        s.manifest.entries.iter().map(|e| (e.model_id.clone(), s.manifest.label_of(e))).collect();
    let k = s.manifest.classes.len();
    let (weights, val_metric) = fit_fusion_weights(components, &holdout, &labels, k, step, transform)?;
    let preds = fuse_scores(&test, &weights, transform)?;
    let truth: Vec<usize> = preds
        .iter()
        .map(|(id, _)| labels.get(id).copied().ok_or_else(|| Error::Dataset(format!("no label for {id}"))))
        .collect::<Result<_>>()?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.1).collect();
    let mut views = Vec::new();
    for c in components {
        let path = results.join(format!("eval_{c}.json"));
        let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        views.extend(summary.views);
    }
    let summary = EvalSummary::from_predictions("fusionnet", views, &s.manifest.classes, &predicted, &truth)?;
    write_atomic(&results.join("fusion_weights.json"), (serde_json::to_string_pretty(&weights)? + "\n").as_bytes())?;
    save_summary(&results, &summary)?;
    print_weights(&weights);
    println!("hold-out average per-class accuracy {val_metric:.4}");
    print!("{}", summary.per_class_table());
    Ok(())
}

fn print_weights(w: &FusionWeights) {
    for (c, v) in w.components.iter().zip(&w.weights) {
        println!("weight {c:<16} {v:.2}");
    }
}

fn gradcheck_cmd(run: &RunArgs, seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be positive".into()));
    }
    let report = gradcheck::run_suite(run.seed, seeds)?;
    print!("{}", report.to_table());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("gradient check above {:e}", gradcheck::TOLERANCE)))
    }
}

fn report_cmd(run: &RunArgs) -> Result<()> {
    let table = render_table(&load_summaries(&run.results_dir())?);
    write_atomic(&run.results_dir().join("report.md"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}
