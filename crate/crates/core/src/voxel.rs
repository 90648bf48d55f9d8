//! Surface voxelization into a binary occupancy grid and the `VOXB` cache format.

use crate::error::{Error, Result};
use crate::mesh::{Point3, TriangleMesh};

pub const DEFAULT_RESOLUTION: usize = 30;

/// Binary occupancy grid over `[-0.5, 0.5]^3`, x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(resolution: usize) -> Self {
        VoxelGrid { dims: [resolution; 3], bits: vec![false; resolution.pow(3)] }
    }

    pub fn from_bits(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} bits for dims {:?}", bits.len(), dims)));
        }
        Ok(VoxelGrid { dims, bits })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Edge length in voxels for cubic grids (the x extent otherwise).
    pub fn resolution(&self) -> usize {
        self.dims[0]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.bits[idx] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Occupancy as 0/1 values in grid order, i.e. a `[z][y][x]` channel stack.
    pub fn to_values<T: From<u8>>(&self) -> Vec<T> {
        self.bits.iter().map(|&b| T::from(b as u8)).collect()
    }
}

/// Closed axis-aligned box / triangle overlap by the separating axis theorem:
/// the 3 box normals, the triangle normal and the 9 edge cross products.
pub fn triangle_box_overlap(center: Point3, half: Point3, tri: &[Point3; 3]) -> bool {
    let v = [sub(tri[0], center), sub(tri[1], center), sub(tri[2], center)];

    for a in 0..3 {
        let (lo, hi) = min_max3(v[0][a], v[1][a], v[2][a]);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }

    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    for edge in &e {
        for a in 0..3 {
            // axis = unit_a x edge
            let mut axis = [0.0; 3];
            axis[(a + 1) % 3] = -edge[(a + 2) % 3];
            axis[(a + 2) % 3] = edge[(a + 1) % 3];
            let p = [dot(axis, v[0]), dot(axis, v[1]), dot(axis, v[2])];
            let (lo, hi) = min_max3(p[0], p[1], p[2]);
            let r = half[0] * axis[0].abs() + half[1] * axis[1].abs() + half[2] * axis[2].abs();
            if lo > r || hi < -r {
                return false;
            }
        }
    }

    let normal = cross(e[0], e[1]);
    let d = dot(normal, v[0]);
    let r = half[0] * normal[0].abs() + half[1] * normal[1].abs() + half[2] * normal[2].abs();
    d.abs() <= r
}

#[inline]
fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn min_max3(a: f64, b: f64, c: f64) -> (f64, f64) {
    (a.min(b).min(c), a.max(b).max(c))
}

/// Center and half-extent of voxel `(i, j, k)` in a cubic grid over the unit cube.
pub fn voxel_box(resolution: usize, i: usize, j: usize, k: usize) -> (Point3, Point3) {
    let h = 1.0 / resolution as f64;
    let c = |n: usize| -0.5 + (n as f64 + 0.5) * h;
    ([c(i), c(j), c(k)], [h * 0.5; 3])
}

fn check_voxelizable(mesh: &TriangleMesh, resolution: usize) -> Result<()> {
    if resolution == 0 || resolution > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("resolution {resolution} out of range")));
    }
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh("mesh has no triangles".into()));
    }
    if let Some(v) = mesh.vertices.iter().find(|v| v.iter().any(|c| !(-0.5..=0.5).contains(c))) {
        return Err(Error::InvalidMesh(format!("vertex {v:?} lies outside the unit cube; normalize first")));
    }
    Ok(())
}

/// Marks every voxel whose closed box intersects at least one triangle.
///
/// Each triangle is only tested against voxels in its bounding-box index range
/// grown by one cell, which contains every voxel the full scan could hit.
pub fn voxelize_surface(mesh: &TriangleMesh, resolution: usize) -> Result<VoxelGrid> {
    check_voxelizable(mesh, resolution)?;
    let mut grid = VoxelGrid::empty(resolution);
    let r = resolution as f64;
    let cell = |x: f64| ((x + 0.5) * r).floor() as isize;
    let clamp = |n: isize| n.clamp(0, resolution as isize - 1) as usize;
    for f in 0..mesh.face_count() {
        let tri = mesh.triangle(f);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let (mn, mx) = min_max3(tri[0][a], tri[1][a], tri[2][a]);
            lo[a] = clamp(cell(mn) - 1);
            hi[a] = clamp(cell(mx) + 1);
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let idx = grid.index(i, j, k);
                    if grid.bits[idx] {
                        continue;
                    }
                    let (c, h) = voxel_box(resolution, i, j, k);
                    if triangle_box_overlap(c, h, &tri) {
                        grid.bits[idx] = true;
                    }
                }
            }
        }
    }
    Ok(grid)
}

pub const CACHE_MAGIC: &[u8; 4] = b"VOXB";
pub const CACHE_VERSION: u8 = 1;
pub const CACHE_HEADER_LEN: usize = 16;
const MAX_CELLS: usize = 1 << 30;

pub fn cache_len(dims: [usize; 3]) -> usize {
    CACHE_HEADER_LEN + dims.iter().product::<usize>().div_ceil(8)
}

pub fn write_voxel_cache(grid: &VoxelGrid) -> Result<Vec<u8>> {
    if !grid.bits.iter().any(|&b| b) {
        return Err(Error::VoxelCache("refusing to write a grid with no occupied voxel".into()));
    }
    let mut out = Vec::with_capacity(cache_len(grid.dims));
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    for d in grid.dims {
        let d = u16::try_from(d).map_err(|_| Error::VoxelCache(format!("dimension {d} exceeds u16")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&[0u8; 5]);
    for chunk in grid.bits.chunks(8) {
        let byte = chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i));
        out.push(byte);
    }
    Ok(out)
}

pub fn read_voxel_cache(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.len() < CACHE_HEADER_LEN {
        return Err(Error::VoxelCache(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CACHE_MAGIC {
        return Err(Error::VoxelCache("bad magic".into()));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(Error::VoxelCache(format!("unsupported version {}", bytes[4])));
    }
    let dims = [0, 1, 2].map(|a| u16::from_le_bytes([bytes[5 + 2 * a], bytes[6 + 2 * a]]) as usize);
    if bytes[11..16].iter().any(|&b| b != 0) {
        return Err(Error::VoxelCache("reserved header bytes are not zero".into()));
    }
    let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let cells = match cells {
        Some(n) if n > 0 && n <= MAX_CELLS => n,
        _ => return Err(Error::VoxelCache(format!("dimension overflow {dims:?}"))),
    };
    let want = cache_len(dims);
    if bytes.len() < want {
        return Err(Error::VoxelCache(format!("truncated payload: {} of {} bytes", bytes.len(), want)));
    }
    if bytes.len() > want {
        return Err(Error::VoxelCache(format!("{} trailing bytes", bytes.len() - want)));
    }
    let payload = &bytes[CACHE_HEADER_LEN..];
    let bits: Vec<bool> = (0..cells).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
    if cells % 8 != 0 && payload[payload.len() - 1] >> (cells % 8) != 0 {
        return Err(Error::VoxelCache("nonzero padding bits".into()));
    }
    Ok(VoxelGrid { dims, bits })
}
