//! On-disk voxel and view caches, and loading them back as training samples.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{load_mesh, DatasetEntry, DatasetManifest};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::mesh::{jitter_mesh, normalize_mesh, JitterConfig, DEFAULT_PADDING};
use crate::render::{make_camera_rig, read_pgm, render_view, write_pgm, VIEW_COUNT};
use crate::transform::{apply_rotation, sample_orientations};
use crate::util::{derive_seed, fmt_sig9, sha256_hex};
use crate::voxel::{read_voxel_cache, voxelize_surface, write_voxel_cache};

pub const INDEX_FILE: &str = "files.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub orientations: usize,
    pub resolution: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Gaussian vertex noise (raw mesh units) applied before rotation.
    pub jitter: Option<f64>,
    pub voxels: bool,
    pub views: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            orientations: 60,
            resolution: 30,
            image_size: 64,
            seed: 0,
            jitter: None,
            voxels: true,
            views: true,
        }
    }
}

impl PrepConfig {
    pub fn voxel_tag(&self) -> String {
        let mut tag = format!("r{}-o{}-s{}", self.resolution, self.orientations, self.seed);
        if let Some(sigma) = self.jitter {
            tag += &format!("-j{}", fmt_sig9(sigma));
        }
        tag
    }

    pub fn view_tag(&self) -> String {
        format!("i{}", self.image_size)
    }

    pub fn voxel_dir(&self, cache: &Path) -> PathBuf {
        cache.join("voxels").join(self.voxel_tag())
    }

    pub fn view_dir(&self, cache: &Path) -> PathBuf {
        cache.join("views").join(self.view_tag())
    }

    pub fn voxel_path(&self, cache: &Path, model_id: &str, k: usize) -> PathBuf {
        self.voxel_dir(cache).join(model_id).join(format!("{k:03}.vox"))
    }

    pub fn view_path(&self, cache: &Path, model_id: &str, v: usize) -> PathBuf {
        self.view_dir(cache).join(format!("{model_id}_v{v}.pgm"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepReport {
    pub written: usize,
    pub skipped: usize,
    /// Existing files that failed validation and were rebuilt.
    pub regenerated: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

fn voxel_valid(path: &Path, resolution: usize) -> Option<bool> {
    let bytes = fs::read(path).ok()?;
    Some(read_voxel_cache(&bytes).is_ok_and(|g| g.dims() == [resolution; 3]))
}

fn view_valid(path: &Path, size: usize) -> Option<bool> {
    let bytes = fs::read(path).ok()?;
    Some(read_pgm(&bytes, 0).is_ok_and(|img| img.size == size))
}

/// Writes `bytes` unless a valid file is already there. Returns
/// (written, regenerated).
fn ensure(path: &Path, valid: Option<bool>, make: impl FnOnce() -> Result<Vec<u8>>) -> Result<(bool, bool)> {
    match valid {
        Some(true) => Ok((false, false)),
        other => {
            write_atomic(path, &make()?)?;
            Ok((true, other == Some(false)))
        }
    }
}

fn prep_model(manifest_dir: &Path, cache: &Path, cfg: &PrepConfig, entry: &DatasetEntry) -> Result<PrepReport> {
    let mut report = PrepReport::default();
    let mut tally = |(w, r): (bool, bool)| {
        if w {
            report.written += 1;
        } else {
            report.skipped += 1;
        }
        report.regenerated += r as usize;
    };
    let voxel_checks: Vec<Option<bool>> = if cfg.voxels {
        (0..cfg.orientations).map(|k| voxel_valid(&cfg.voxel_path(cache, &entry.model_id, k), cfg.resolution)).collect()
    } else {
        Vec::new()
    };
    let view_checks: Vec<Option<bool>> = if cfg.views {
        (0..VIEW_COUNT).map(|v| view_valid(&cfg.view_path(cache, &entry.model_id, v), cfg.image_size)).collect()
    } else {
        Vec::new()
    };
    if voxel_checks.iter().chain(&view_checks).all(|c| *c == Some(true)) {
        report.skipped = voxel_checks.len() + view_checks.len();
        return Ok(report);
    }
    let raw = load_mesh(manifest_dir, entry)?;
    if cfg.voxels {
        let mesh = match cfg.jitter {
            Some(sigma) => jitter_mesh(
                &raw,
                JitterConfig { sigma, seed: derive_seed(cfg.seed, &format!("jitter/{}", entry.model_id)) },
            )?,
            None => raw.clone(),
        };
        let set = sample_orientations(cfg.orientations, derive_seed(cfg.seed, &entry.model_id))?;
        let dir = cfg.voxel_dir(cache).join(&entry.model_id);
        let text_path = dir.join("orientations.txt");
        if fs::read_to_string(&text_path).ok().as_deref() != Some(set.to_text().as_str()) {
            write_atomic(&text_path, set.to_text().as_bytes())?;
        }
        for (k, check) in voxel_checks.into_iter().enumerate() {
            tally(ensure(&cfg.voxel_path(cache, &entry.model_id, k), check, || {
                let posed = normalize_mesh(&apply_rotation(&mesh, set.orientations[k]), DEFAULT_PADDING)?;
                write_voxel_cache(&voxelize_surface(&posed, cfg.resolution)?)
            })?);
        }
    }
    if cfg.views {
        let rig = make_camera_rig(cfg.image_size)?;
        let mesh = normalize_mesh(&raw, DEFAULT_PADDING)?;
        for (v, check) in view_checks.into_iter().enumerate() {
            tally(ensure(&cfg.view_path(cache, &entry.model_id, v), check, || {
                Ok(write_pgm(&render_view(&mesh, &rig, v)?))
            })?);
        }
    }
    Ok(report)
}

/// Builds every missing or corrupt cache file for the manifest, in parallel
/// over models, then refreshes the content-hash index of each cache
/// directory. Per-model failures are collected in the report.
pub fn prepare_caches(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    cache: &Path,
    cfg: &PrepConfig,
) -> Result<PrepReport> {
    if cfg.voxels && cfg.orientations == 0 {
        return Err(Error::InvalidArgument("orientation count must be positive".into()));
    }
    let results: Vec<(String, Result<PrepReport>)> =
        manifest.entries.par_iter().map(|e| (e.model_id.clone(), prep_model(manifest_dir, cache, cfg, e))).collect();
    let mut total = PrepReport::default();
    for (id, r) in results {
        match r {
            Ok(r) => {
                total.written += r.written;
                total.skipped += r.skipped;
                total.regenerated += r.regenerated;
            }
            Err(e) => total.failures.push(format!("{id}: {e}")),
        }
    }
    if cfg.voxels {
        write_index(&cfg.voxel_dir(cache), manifest, |id| {
            (0..cfg.orientations).map(|k| format!("{id}/{k:03}.vox")).collect()
        })?;
    }
    if cfg.views {
        write_index(&cfg.view_dir(cache), manifest, |id| (0..VIEW_COUNT).map(|v| format!("{id}_v{v}.pgm")).collect())?;
    }
    Ok(total)
}

fn write_index(dir: &Path, manifest: &DatasetManifest, files: impl Fn(&str) -> Vec<String>) -> Result<()> {
    let rels: Vec<String> = manifest.entries.iter().flat_map(|e| files(&e.model_id)).collect();
    let hashes: Vec<FileHash> = rels
        .par_iter()
        .filter_map(|rel| fs::read(dir.join(rel)).ok().map(|b| FileHash { path: rel.clone(), sha256: sha256_hex(&b) }))
        .collect();
    let text: String = hashes.iter().map(|h| serde_json::to_string(h).expect("hash serializes") + "\n").collect();
    let path = dir.join(INDEX_FILE);
    if fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

pub fn read_index(dir: &Path) -> Result<Vec<FileHash>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Voxels,
    /// Gray views expanded to three identical channels.
    Views,
}

/// All cached samples of a set of models, kept compact (one byte per voxel
/// or pixel). Samples of one model are contiguous.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub kind: SampleKind,
    pub item_shape: Vec<usize>,
    pub per_object: usize,
    pub model_ids: Vec<String>,
    pub labels: Vec<usize>,
    base_len: usize,
    data: Vec<u8>,
}

impl SampleSet {
    pub fn objects(&self) -> usize {
        self.model_ids.len()
    }

    pub fn len(&self) -> usize {
        self.objects() * self.per_object
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item_len(&self) -> usize {
        self.item_shape.iter().product()
    }

    pub fn sample_label(&self, sample: usize) -> usize {
        self.labels[sample / self.per_object]
    }

    /// Appends the network input for `sample` to `out`.
    pub fn push_input(&self, sample: usize, out: &mut Vec<f32>) {
        let raw = &self.data[sample * self.base_len..(sample + 1) * self.base_len];
        match self.kind {
            SampleKind::Voxels => out.extend(raw.iter().map(|&b| b as f32)),
            SampleKind::Views => {
                for _ in 0..3 {
                    out.extend(raw.iter().map(|&b| b as f32 / 255.0));
                }
            }
        }
    }

    /// Only the models whose label is in `keep`, relabelled to positions in `keep`.
    pub fn subset(&self, keep: &[usize]) -> SampleSet {
        let chunk = self.per_object * self.base_len;
        let mut out = SampleSet { model_ids: Vec::new(), labels: Vec::new(), data: Vec::new(), ..self.clone_header() };
        for (o, &l) in self.labels.iter().enumerate() {
            if let Some(new) = keep.iter().position(|&k| k == l) {
                out.model_ids.push(self.model_ids[o].clone());
                out.labels.push(new);
                out.data.extend_from_slice(&self.data[o * chunk..(o + 1) * chunk]);
            }
        }
        out
    }

    fn clone_header(&self) -> SampleSet {
        SampleSet {
            kind: self.kind,
            item_shape: self.item_shape.clone(),
            per_object: self.per_object,
            model_ids: Vec::new(),
            labels: Vec::new(),
            base_len: self.base_len,
            data: Vec::new(),
        }
    }

    pub fn object_inputs(&self, object: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.per_object * self.item_len());
        for s in object * self.per_object..(object + 1) * self.per_object {
            self.push_input(s, &mut out);
        }
        out
    }
}

/// Loads voxel caches (`voxels = true`) or view images for `entries`.
pub fn load_samples(
    manifest: &DatasetManifest,
    entries: &[DatasetEntry],
    cache: &Path,
    cfg: &PrepConfig,
    kind: SampleKind,
) -> Result<SampleSet> {
    let (per_object, base_len, item_shape) = match kind {
        SampleKind::Voxels => (cfg.orientations, cfg.resolution.pow(3), vec![cfg.resolution; 3]),
        SampleKind::Views => (VIEW_COUNT, cfg.image_size.pow(2), vec![3, cfg.image_size, cfg.image_size]),
    };
    let chunks: Vec<Result<Vec<u8>>> = entries
        .par_iter()
        .map(|e| {
            let mut buf = Vec::with_capacity(per_object * base_len);
            for k in 0..per_object {
                match kind {
                    SampleKind::Voxels => {
                        let path = cfg.voxel_path(cache, &e.model_id, k);
                        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
                        let grid = read_voxel_cache(&bytes)?;
                        if grid.dims() != [cfg.resolution; 3] {
                            return Err(Error::Shape(format!(
                                "{}: grid {:?} does not match resolution {}",
                                path.display(),
                                grid.dims(),
                                cfg.resolution
                            )));
                        }
                        buf.extend(grid.bits().iter().map(|&b| b as u8));
                    }
                    SampleKind::Views => {
                        let path = cfg.view_path(cache, &e.model_id, k);
                        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
                        let img = read_pgm(&bytes, k)?;
                        if img.size != cfg.image_size {
                            return Err(Error::Shape(format!(
                                "{}: image {} does not match size {}",
                                path.display(),
                                img.size,
                                cfg.image_size
                            )));
                        }
                        buf.extend(img.pixels.iter().map(|&p| crate::render::to_gray8(p)));
                    }
                }
            }
            Ok(buf)
        })
        .collect();
    let mut data = Vec::with_capacity(entries.len() * per_object * base_len);
    for c in chunks {
        data.extend(c?);
    }
    let labels = entries
        .iter()
        .map(|e| manifest.class_index(&e.label).ok_or_else(|| Error::Dataset(format!("unknown label {}", e.label))))
        .collect::<Result<_>>()?;
    Ok(SampleSet {
        kind,
        item_shape,
        per_object,
        model_ids: entries.iter().map(|e| e.model_id.clone()).collect(),
        labels,
        base_len,
        data,
    })
}
