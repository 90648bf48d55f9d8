//! Dataset manifests: ModelNet ingestion and procedurally generated shapes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::mesh::{parse_off, shapes, write_off, TriangleMesh};
use crate::util::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub model_id: String,
    pub label: String,
    pub split: Split,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Sorted class names; a label's index in this list is its class id.
    pub classes: Vec<String>,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn new(mut entries: Vec<DatasetEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.model_id.cmp(&b.model_id));
        let classes: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        let m = DatasetManifest { classes: classes.into_iter().map(String::from).collect(), entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Dataset("no entries".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.model_id.is_empty() || e.model_id.contains(['/', '\\']) || e.model_id.starts_with('.') {
                return Err(Error::Dataset(format!("bad model id {:?}", e.model_id)));
            }
            if !seen.insert(e.model_id.as_str()) {
                return Err(Error::Dataset(format!("duplicate model id {}", e.model_id)));
            }
        }
        for c in &self.classes {
            for split in [Split::Train, Split::Test] {
                if !self.entries.iter().any(|e| &e.label == c && e.split == split) {
                    return Err(Error::Dataset(format!("class {c} has no {split} entries")));
                }
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    pub fn label_of(&self, entry: &DatasetEntry) -> usize {
        self.class_index(&entry.label).expect("label listed in classes")
    }

    pub fn split(&self, split: Split) -> Vec<&DatasetEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: DatasetEntry =
                serde_json::from_str(line).map_err(|err| Error::Dataset(format!("manifest line {}: {err}", i + 1)))?;
            entries.push(e);
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("manifest not found: {}", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Restricted to `classes` (which must all exist); class ids are renumbered.
    pub fn subset(&self, classes: &[&str]) -> Result<Self> {
        for c in classes {
            if self.class_index(c).is_none() {
                return Err(Error::Dataset(format!("unknown class {c}")));
            }
        }
        Self::new(self.entries.iter().filter(|e| classes.contains(&e.label.as_str())).cloned().collect())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

pub fn resolve_path(manifest_dir: &Path, entry: &DatasetEntry) -> PathBuf {
    if entry.path.is_absolute() {
        entry.path.clone()
    } else {
        manifest_dir.join(&entry.path)
    }
}

pub fn load_mesh(manifest_dir: &Path, entry: &DatasetEntry) -> Result<TriangleMesh> {
    let path = resolve_path(manifest_dir, entry);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut mesh = parse_off(&bytes).map_err(|e| Error::InvalidMesh(format!("{}: {e}", path.display())))?;
    mesh.class_label = Some(entry.label.clone());
    mesh.source_path = Some(path.display().to_string());
    Ok(mesh)
}

/// Scans `root/<class>/{train,test}/*.off`, parsing every file. Unparseable
/// files are collected and reported together.
pub fn ingest_modelnet(root: &Path) -> Result<DatasetManifest> {
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> =
            fs::read_dir(p).map_err(|e| Error::io(p, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        v.sort();
        Ok(v)
    };
    if !root.is_dir() {
        return Err(Error::NotFound(format!("dataset root not found: {}", root.display())));
    }
    let classes: Vec<PathBuf> = read_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::Dataset(format!("no classes found in {}", root.display())));
    }
    let mut entries = Vec::new();
    let mut bad = Vec::new();
    for class_dir in &classes {
        let label = class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for split in [Split::Train, Split::Test] {
            let dir = class_dir.join(split.to_string());
            if !dir.is_dir() {
                return Err(Error::Dataset(format!("missing split directory {}", dir.display())));
            }
            for file in read_dir(&dir)? {
                if file.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("off")) != Some(true) {
                    continue;
                }
                let parsed = fs::read(&file).map_err(|e| Error::io(&file, e)).and_then(|b| parse_off(&b));
                if let Err(e) = parsed {
                    bad.push(format!("{}: {e}", file.display()));
                    continue;
                }
                let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let path = fs::canonicalize(&file).map_err(|e| Error::io(&file, e))?;
                entries.push(DatasetEntry { model_id: stem, label: label.clone(), split, path });
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Dataset(format!("{} unparseable OFF files:\n  {}", bad.len(), bad.join("\n  "))));
    }
    DatasetManifest::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShapeKind {
    Box,
    Sphere,
    Pyramid,
    Cylinder,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] =
        [ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Pyramid, ShapeKind::Cylinder, ShapeKind::Torus];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
        }
    }

    /// Random instance of the shape family.
    pub fn generate(self, rng: &mut impl Rng) -> TriangleMesh {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match self {
            ShapeKind::Box => shapes::cuboid([u(0.6, 1.4), u(0.6, 1.4), u(0.6, 1.4)]),
            ShapeKind::Sphere => {
                let subdiv = if u(0.0, 1.0) < 0.5 { 2 } else { 3 };
                let s = [u(0.85, 1.15), u(0.85, 1.15), u(0.85, 1.15)];
                shapes::icosphere(subdiv).scaled(s)
            }
            ShapeKind::Pyramid => shapes::pyramid(u(0.8, 1.4), u(0.8, 1.6)),
            ShapeKind::Cylinder => {
                let segments = 12 + 4 * (u(0.0, 3.0) as u32);
                shapes::cylinder(u(0.3, 0.6), u(0.8, 1.8), segments)
            }
            ShapeKind::Torus => {
                let major = u(0.6, 1.0);
                shapes::torus(major, major * u(0.2, 0.4), 24, 12)
            }
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape kind {s:?}")))
    }
}

/// Writes `per_class` meshes of every kind under `out/meshes/` plus the
/// manifest; the first 80% of each class (rounded) are training models.
pub fn make_synthetic_dataset(kinds: &[ShapeKind], per_class: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    if per_class < 2 {
        return Err(Error::InvalidArgument(format!("per_class must be at least 2, got {per_class}")));
    }
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no shape kinds".into()));
    }
    let unique: BTreeSet<_> = kinds.iter().collect();
    if unique.len() != kinds.len() {
        return Err(Error::InvalidArgument("shape kinds repeat".into()));
    }
    let n_train = ((per_class as f64 * 0.8).round() as usize).clamp(1, per_class - 1);
    let mut entries = Vec::new();
    for &kind in kinds {
        let dir = out.join("meshes").join(kind.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, kind.name()));
        for i in 0..per_class {
            let model_id = format!("{}_{:04}", kind.name(), i + 1);
            let rel = PathBuf::from("meshes").join(kind.name()).join(format!("{model_id}.off"));
            write_atomic(&out.join(&rel), &write_off(&kind.generate(&mut rng)))?;
            let split = if i < n_train { Split::Train } else { Split::Test };
            entries.push(DatasetEntry { model_id, label: kind.name().into(), split, path: rel });
        }
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Parses `"4x50"`, `"box,sphere×50"` or `"4×50"`: a class count (taken from
/// the start of the kind list) or explicit kinds, then models per class.
pub fn parse_synthetic_spec(spec: &str) -> Result<(Vec<ShapeKind>, usize)> {
    let bad = || Error::InvalidArgument(format!("synthetic spec {spec:?} is not CLASSESxN"));
    let (classes, n) = spec.rsplit_once(['x', '×', 'X']).ok_or_else(bad)?;
    let per_class: usize = n.trim().parse().map_err(|_| bad())?;
    let kinds = if let Ok(count) = classes.trim().parse::<usize>() {
        if count == 0 || count > ShapeKind::ALL.len() {
            return Err(Error::InvalidArgument(format!("class count must be 1..=5, got {count}")));
        }
        ShapeKind::ALL[..count].to_vec()
    } else {
        classes.split(',').map(ShapeKind::from_str).collect::<Result<Vec<_>>>()?
    };
    Ok((kinds, per_class))
}

/// Stratified hold-out: per class, `fraction` of the training models (at
/// least one, leaving at least one) chosen by a seeded shuffle.
pub fn holdout_split(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetEntry>, Vec<DatasetEntry>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("hold-out fraction {fraction} outside [0, 1)")));
    }
    let mut by_class: BTreeMap<&str, Vec<&DatasetEntry>> = BTreeMap::new();
    for e in manifest.split(Split::Train) {
        by_class.entry(e.label.as_str()).or_default().push(e);
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (label, mut list) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("holdout/{label}")));
        use rand::seq::SliceRandom;
        list.shuffle(&mut rng);
        let k = if fraction == 0.0 || list.len() < 2 {
            0
        } else {
            ((list.len() as f64 * fraction).round() as usize).clamp(1, list.len() - 1)
        };
        held.extend(list[..k].iter().map(|e| (*e).clone()));
        train.extend(list[k..].iter().map(|e| (*e).clone()));
    }
    train.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    held.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    Ok((train, held))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sha256_hex;

    fn euler(mesh: &TriangleMesh) -> i64 {
        let mut edges = BTreeSet::new();
        for f in &mesh.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        mesh.vertices.len() as i64 - edges.len() as i64 + mesh.faces.len() as i64
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let kinds = &ShapeKind::ALL[..4];
        let m = make_synthetic_dataset(kinds, 50, 9, a.path()).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (160, 40));
        make_synthetic_dataset(kinds, 50, 9, b.path()).unwrap();
        for e in &m.entries {
            let ha = sha256_hex(&fs::read(a.path().join(&e.path)).unwrap());
            let hb = sha256_hex(&fs::read(b.path().join(&e.path)).unwrap());
            assert_eq!(ha, hb, "{}", e.model_id);
        }
        let back = DatasetManifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert!(make_synthetic_dataset(kinds, 1, 9, a.path()).is_err());
    }

    #[test]
    fn generated_spheres_are_closed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let m = ShapeKind::Sphere.generate(&mut rng);
            assert_eq!(euler(&m), 2);
        }
    }

    #[test]
    fn synthetic_spec_forms() {
        assert_eq!(parse_synthetic_spec("4x50").unwrap(), (ShapeKind::ALL[..4].to_vec(), 50));
        assert_eq!(parse_synthetic_spec("2×3").unwrap().1, 3);
        assert_eq!(parse_synthetic_spec("torus,box x 7").unwrap(), (vec![ShapeKind::Torus, ShapeKind::Box], 7));
        assert!(parse_synthetic_spec("9x5").is_err());
        assert!(parse_synthetic_spec("4").is_err());
    }

    #[test]
    fn ingest_layout_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest_modelnet(dir.path()).unwrap_err().to_string().contains("no classes found"));
        let cube = write_off(&shapes::cuboid([1.0, 1.0, 1.0]));
        for class in ["chair", "desk"] {
            for split in ["train", "test"] {
                let d = dir.path().join(class).join(split);
                fs::create_dir_all(&d).unwrap();
                fs::write(d.join(format!("{class}_{split}_1.off")), &cube).unwrap();
            }
        }
        let m = ingest_modelnet(dir.path()).unwrap();
        assert_eq!(m.classes, ["chair", "desk"]);
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (2, 2));
        fs::write(dir.path().join("desk/test/broken.off"), "OFF\n3 1 0\n0 0 0\n").unwrap();
        let err = ingest_modelnet(dir.path()).unwrap_err().to_string();
        assert!(err.contains("broken.off"), "{err}");
        fs::remove_dir_all(dir.path().join("chair/test")).unwrap();
        assert!(ingest_modelnet(dir.path()).unwrap_err().to_string().contains("missing split"));
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic_dataset(&ShapeKind::ALL[..3], 10, 1, dir.path()).unwrap();
        let (train, held) = holdout_split(&m, 0.2, 5).unwrap();
        assert_eq!(train.len() + held.len(), 24);
        for c in &m.classes {
            assert_eq!(held.iter().filter(|e| &e.label == c).count(), 2);
        }
        assert!(held.iter().all(|h| train.iter().all(|t| t.model_id != h.model_id)));
        assert_eq!(holdout_split(&m, 0.2, 5).unwrap().1, held);
    }

    #[test]
    fn manifest_rejects_duplicates_and_missing_splits() {
        let e = |id: &str, split| DatasetEntry { model_id: id.into(), label: "a".into(), split, path: "x.off".into() };
        assert!(DatasetManifest::new(vec![e("m1", Split::Train), e("m1", Split::Test)]).is_err());
        assert!(DatasetManifest::new(vec![e("m1", Split::Train)]).is_err());
        assert!(DatasetManifest::new(vec![e("m1", Split::Train), e("m2", Split::Test)]).is_ok());
    }
}
