//! Orthographic, depth-buffered, flat-shaded Phong rendering from 20 cameras
//! at the vertices of a regular dodecahedron.

use crate::error::{Error, Result};
use crate::mesh::shapes::GOLDEN_RATIO;
use crate::mesh::{Point3, TriangleMesh};

pub const VIEW_COUNT: usize = 20;
pub const DEFAULT_IMAGE_SIZE: usize = 64;

pub const AMBIENT: f64 = 0.1;
pub const DIFFUSE: f64 = 0.6;
pub const SPECULAR: f64 = 0.3;
pub const SHININESS: i32 = 32;

/// Half-width of the orthographic window. A normalized mesh lies inside the
/// cube `[-0.45, 0.45]^3`, whose circumradius is 90% of this value, so no view
/// ever clips it.
pub const ORTHO_HALF_EXTENT: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub positions: Vec<Point3>,
    pub up_hint: Point3,
    pub image_size: usize,
    pub half_extent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub size: usize,
    pub view_index: usize,
    /// Row-major, row 0 at the top.
    pub pixels: Vec<f32>,
}

/// Vertices of the dodecahedron dual to [`crate::mesh::shapes::icosahedron`]:
/// (±1, ±1, ±1), (0, ±φ, ±1/φ), (±1/φ, 0, ±φ), (±φ, ±1/φ, 0), scaled to unit length.
pub fn dodecahedron_vertices() -> Vec<Point3> {
    let p = GOLDEN_RATIO;
    let q = 1.0 / p;
    let s = [-1.0, 1.0];
    let mut v = Vec::with_capacity(20);
    for &x in &s {
        for &y in &s {
            for &z in &s {
                v.push([x, y, z]);
            }
        }
    }
    for &a in &s {
        for &b in &s {
            v.push([0.0, a * p, b * q]);
            v.push([a * q, 0.0, b * p]);
            v.push([a * p, b * q, 0.0]);
        }
    }
    let norm = 3f64.sqrt();
    v.into_iter().map(|p| [p[0] / norm, p[1] / norm, p[2] / norm]).collect()
}

pub fn make_camera_rig(image_size: usize) -> Result<CameraRig> {
    if image_size < 16 {
        return Err(Error::InvalidArgument(format!("image size {image_size} below minimum 16")));
    }
    Ok(CameraRig {
        positions: dodecahedron_vertices(),
        up_hint: [0.0, 0.0, 1.0],
        image_size,
        half_extent: ORTHO_HALF_EXTENT,
    })
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: Point3) -> Point3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Right/up image axes for a camera looking from `eye` toward the origin.
pub(crate) fn camera_basis(eye: Point3, up_hint: Point3) -> (Point3, Point3) {
    let forward = [-eye[0], -eye[1], -eye[2]];
    let mut right = cross(forward, up_hint);
    if dot(right, right) < 1e-12 {
        right = cross(forward, [0.0, 1.0, 0.0]);
    }
    let right = normalize(right);
    let up = normalize(cross(right, forward));
    (right, up)
}

/// Phong intensity with the light co-located with the viewer; `cos` is the
/// cosine between the (viewer-facing) normal and the view direction.
pub fn phong_intensity(cos: f64) -> f64 {
    let cos = cos.clamp(0.0, 1.0);
    // reflection of the light about the normal, dotted with the view vector
    let r_dot_v = (2.0 * cos * cos - 1.0).max(0.0);
    (AMBIENT + DIFFUSE * cos + SPECULAR * r_dot_v.powi(SHININESS)).clamp(0.0, 1.0)
}

pub fn render_view(mesh: &TriangleMesh, rig: &CameraRig, view_index: usize) -> Result<ViewImage> {
    if view_index >= rig.positions.len() {
        return Err(Error::InvalidArgument(format!(
            "view index {view_index} out of range (rig has {})",
            rig.positions.len()
        )));
    }
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh("cannot render a mesh with no faces".into()));
    }
    let n = rig.image_size;
    let eye = normalize(rig.positions[view_index]);
    let (right, up) = camera_basis(eye, rig.up_hint);
    let scale = n as f64 / (2.0 * rig.half_extent);
    let half = n as f64 * 0.5;

    // screen x grows right, screen y grows down; depth grows toward the camera
    let projected: Vec<[f64; 3]> =
        mesh.vertices.iter().map(|&v| [half + dot(v, right) * scale, half - dot(v, up) * scale, dot(v, eye)]).collect();

    let mut depth = vec![f64::NEG_INFINITY; n * n];
    let mut pixels = vec![0f32; n * n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let [a, b, c] = f.map(|i| projected[i as usize]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-14 {
            continue;
        }
        let tri = mesh.triangle(fi);
        let normal = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
        let len = dot(normal, normal).sqrt();
        if len == 0.0 {
            continue;
        }
        let shade = phong_intensity((dot(normal, eye) / len).abs()) as f32;

        let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let x1 = (a[0].max(b[0]).max(c[0]).ceil() as isize).min(n as isize - 1);
        let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let y1 = (a[1].max(b[1]).max(c[1]).ceil() as isize).min(n as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        let inv = 1.0 / area;
        for py in y0..=y1 as usize {
            let sy = py as f64 + 0.5;
            for px in x0..=x1 as usize {
                let sx = px as f64 + 0.5;
                let w0 = ((b[0] - sx) * (c[1] - sy) - (b[1] - sy) * (c[0] - sx)) * inv;
                let w1 = ((c[0] - sx) * (a[1] - sy) - (c[1] - sy) * (a[0] - sx)) * inv;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let idx = py * n + px;
                if z > depth[idx] {
                    depth[idx] = z;
                    pixels[idx] = shade;
                }
            }
        }
    }
    Ok(ViewImage { size: n, view_index, pixels })
}

pub fn render_all_views(mesh: &TriangleMesh, rig: &CameraRig) -> Result<Vec<ViewImage>> {
    (0..rig.positions.len()).map(|v| render_view(mesh, rig, v)).collect()
}

/// Stacks three identical copies of the image, channel-major.
pub fn replicate_channels(img: &ViewImage) -> Vec<f32> {
    let mut out = Vec::with_capacity(3 * img.pixels.len());
    for _ in 0..3 {
        out.extend_from_slice(&img.pixels);
    }
    out
}

pub fn to_gray8(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) as f64).round_ties_even() as u8
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(img: &ViewImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.size, img.size).into_bytes();
    out.extend(img.pixels.iter().map(|&v| to_gray8(v)));
    out
}

pub fn read_pgm(bytes: &[u8], view_index: usize) -> Result<ViewImage> {
    let bad = |m: &str| Error::InvalidArgument(format!("PGM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    if fields[3] != "255" || w != h || w == 0 {
        return Err(bad("expected a square 8-bit image"));
    }
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    Ok(ViewImage { size: w, view_index, pixels: data.iter().map(|&b| b as f32 / 255.0).collect() })
}
