//! Triangle meshes: OFF I/O, Gaussian vertex jitter and unit-cube normalization.

mod off;
pub mod shapes;

pub use off::{parse_off, write_off};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// A triangle soup with an optional class label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
    pub class_label: Option<String>,
    pub source_path: Option<String>,
}

impl TriangleMesh {
    /// Builds a mesh and checks the structural invariants.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TriangleMesh { vertices, faces, class_label: None, source_path: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!("need at least 3 vertices, got {}", self.vertices.len())));
        }
        if self.faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} references vertex out of range (vertex count {n})")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex index")));
            }
        }
        if let Some(v) = self.vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {v:?}")));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn translated(&self, t: Point3) -> TriangleMesh {
        self.map_vertices(|v| [v[0] + t[0], v[1] + t[1], v[2] + t[2]])
    }

    pub fn scaled(&self, s: Point3) -> TriangleMesh {
        self.map_vertices(|v| [v[0] * s[0], v[1] * s[1], v[2] * s[2]])
    }

    /// Returns a copy with every vertex mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(Point3) -> Point3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            class_label: self.class_label.clone(),
            source_path: self.source_path.clone(),
        }
    }
}

/// Gaussian displacement of vertex coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterConfig {
    /// Standard deviation in raw model units.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig { sigma: 5.0, seed: 0 }
    }
}

/// Displaces every vertex coordinate by an independent N(0, sigma²) draw.
pub fn jitter_mesh(mesh: &TriangleMesh, cfg: JitterConfig) -> Result<TriangleMesh> {
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter sigma must be >= 0, got {}", cfg.sigma)));
    }
    if cfg.sigma == 0.0 {
        return Ok(mesh.clone());
    }
    let normal = Normal::new(0.0, cfg.sigma).expect("sigma validated above");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        for c in v.iter_mut() {
            *c += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

pub const DEFAULT_PADDING: f64 = 0.05;

/// Centers the bounding box at the origin and scales uniformly so the
/// longest axis spans `1 - 2 * padding` of the unit cube `[-0.5, 0.5]^3`.
pub fn normalize_mesh(mesh: &TriangleMesh, padding: f64) -> Result<TriangleMesh> {
    if !(0.0..0.5).contains(&padding) {
        return Err(Error::InvalidArgument(format!("padding must be in [0, 0.5), got {padding}")));
    }
    if mesh.vertices.is_empty() {
        return Err(Error::InvalidMesh("mesh has no vertices".into()));
    }
    let (lo, hi) = mesh.bounding_box();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::InvalidMesh("zero-extent mesh (all vertices coincide)".into()));
    }
    let center = [(lo[0] + hi[0]) * 0.5, (lo[1] + hi[1]) * 0.5, (lo[2] + hi[2]) * 0.5];
    let scale = (1.0 - 2.0 * padding) / extent;
    Ok(mesh.map_vertices(|v| [(v[0] - center[0]) * scale, (v[1] - center[1]) * scale, (v[2] - center[2]) * scale]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_mesh(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
        shapes::cuboid([sx, sy, sz]).translated([0.0, 0.0, 0.0])
    }

    #[test]
    fn invariant_checks() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]]).is_ok());
        assert!(TriangleMesh::new(v.clone(), vec![]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriangleMesh::new(v[..2].to_vec(), vec![[0, 1, 0]]).is_err());
    }

    #[test]
    fn zero_sigma_jitter_is_identity() {
        let m = box_mesh(1.0, 2.0, 3.0);
        let j = jitter_mesh(&m, JitterConfig { sigma: 0.0, seed: 9 }).unwrap();
        assert_eq!(j, m);
    }

    #[test]
    fn jitter_statistics_and_faces() {
        let n = 10_000;
        let vertices: Vec<Point3> = (0..n).map(|i| [i as f64, 0.0, -(i as f64)]).collect();
        let faces: Vec<[u32; 3]> = (0..n as u32 - 2).map(|i| [i, i + 1, i + 2]).collect();
        let m = TriangleMesh::new(vertices, faces).unwrap();
        let j = jitter_mesh(&m, JitterConfig { sigma: 5.0, seed: 1234 }).unwrap();
        assert_eq!(j.faces, m.faces);
        let d: Vec<f64> =
            m.vertices.iter().zip(&j.vertices).flat_map(|(a, b)| (0..3).map(move |k| b[k] - a[k])).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert!(mean.abs() < 0.2, "mean {mean}");
        assert!((var.sqrt() - 5.0).abs() < 0.2, "std {}", var.sqrt());

        let again = jitter_mesh(&m, JitterConfig { sigma: 5.0, seed: 1234 }).unwrap();
        assert_eq!(again, j);
    }

    #[test]
    fn negative_sigma_rejected() {
        let m = box_mesh(1.0, 1.0, 1.0);
        assert!(jitter_mesh(&m, JitterConfig { sigma: -1.0, seed: 0 }).is_err());
    }

    #[test]
    fn unit_cube_normalizes_to_centered_cube() {
        let m = shapes::cuboid([1.0, 1.0, 1.0]).translated([0.5, 0.5, 0.5]);
        let n = normalize_mesh(&m, 0.0).unwrap();
        let (lo, hi) = n.bounding_box();
        assert_eq!(lo, [-0.5; 3]);
        assert_eq!(hi, [0.5; 3]);
    }

    #[test]
    fn elongated_box_extents() {
        let m = box_mesh(2.0, 1.0, 1.0).translated([3.0, -1.0, 7.0]);
        let n = normalize_mesh(&m, 0.05).unwrap();
        let (lo, hi) = n.bounding_box();
        let ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
        assert!((ext[0] - 0.9).abs() < 1e-9);
        assert!((ext[1] - 0.45).abs() < 1e-9);
        assert!((ext[2] - 0.45).abs() < 1e-9);
        for a in 0..3 {
            assert!((lo[a] + hi[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let m = TriangleMesh {
            vertices: vec![[1.0, 1.0, 1.0]; 3],
            faces: vec![[0, 1, 2]],
            class_label: None,
            source_path: None,
        };
        assert!(matches!(normalize_mesh(&m, 0.05), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn normalize_is_idempotent() {
        let m = shapes::torus(1.0, 0.3, 12, 8).translated([4.0, 2.0, -1.0]);
        let once = normalize_mesh(&m, 0.05).unwrap();
        let twice = normalize_mesh(&once, 0.05).unwrap();
        for (a, b) in once.vertices.iter().zip(&twice.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }
}
