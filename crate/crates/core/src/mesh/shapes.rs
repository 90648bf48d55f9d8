//! Procedural primitives, centered at the origin.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{Point3, TriangleMesh};

fn mesh(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> TriangleMesh {
    TriangleMesh { vertices, faces, class_label: None, source_path: None }
}

/// Axis-aligned box with the given edge lengths; 8 vertices, 12 triangles.
pub fn cuboid(size: Point3) -> TriangleMesh {
    let h = [size[0] * 0.5, size[1] * 0.5, size[2] * 0.5];
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    let quads: [[u32; 4]; 6] = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    mesh(vertices, faces)
}

pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Regular icosahedron with vertices (0, ±1, ±φ) and cyclic permutations,
/// projected to the unit sphere.
pub fn icosahedron() -> TriangleMesh {
    let p = GOLDEN_RATIO;
    let raw: [Point3; 12] = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    mesh(raw.iter().map(|&v| unit(v)).collect(), faces)
}

fn unit(v: Point3) -> Point3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Unit sphere by repeated 4-way subdivision of the icosahedron. Midpoints are
/// shared between neighbouring faces so the result is a closed 2-manifold.
pub fn icosphere(subdivisions: u32) -> TriangleMesh {
    let mut m = icosahedron();
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut faces = Vec::with_capacity(m.faces.len() * 4);
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Point3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (verts[a as usize], verts[b as usize]);
                verts.push(unit([(pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5, (pa[2] + pb[2]) * 0.5]));
                verts.len() as u32 - 1
            })
        };
        for &[a, b, c] in &m.faces {
            let ab = mid(a, b, &mut m.vertices);
            let bc = mid(b, c, &mut m.vertices);
            let ca = mid(c, a, &mut m.vertices);
            faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        m.faces = faces;
    }
    m
}

/// Square-based pyramid: base `[-w/2, w/2]^2` at z = -h/2, apex at z = h/2.
pub fn pyramid(base: f64, height: f64) -> TriangleMesh {
    let (b, h) = (base * 0.5, height * 0.5);
    let vertices = vec![[-b, -b, -h], [b, -b, -h], [b, b, -h], [-b, b, -h], [0.0, 0.0, h]];
    let faces = vec![[0, 2, 1], [0, 3, 2], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
    mesh(vertices, faces)
}

/// Closed cylinder along z with capped ends.
pub fn cylinder(radius: f64, height: f64, segments: u32) -> TriangleMesh {
    let segments = segments.max(3);
    let h = height * 0.5;
    let mut vertices = Vec::with_capacity(2 * segments as usize + 2);
    for i in 0..segments {
        let t = 2.0 * PI * i as f64 / segments as f64;
        let (s, c) = t.sin_cos();
        vertices.push([radius * c, radius * s, -h]);
        vertices.push([radius * c, radius * s, h]);
    }
    let bottom = vertices.len() as u32;
    vertices.push([0.0, 0.0, -h]);
    vertices.push([0.0, 0.0, h]);
    let top = bottom + 1;
    let mut faces = Vec::with_capacity(4 * segments as usize);
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bottom, b1, b0]);
        faces.push([top, t0, t1]);
    }
    mesh(vertices, faces)
}

/// Torus around z with major radius `major` and tube radius `minor`.
pub fn torus(major: f64, minor: f64, rings: u32, sides: u32) -> TriangleMesh {
    let (rings, sides) = (rings.max(3), sides.max(3));
    let mut vertices = Vec::with_capacity((rings * sides) as usize);
    for i in 0..rings {
        let u = 2.0 * PI * i as f64 / rings as f64;
        for j in 0..sides {
            let v = 2.0 * PI * j as f64 / sides as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let idx = |i: u32, j: u32| (i % rings) * sides + (j % sides);
    let mut faces = Vec::with_capacity(2 * (rings * sides) as usize);
    for i in 0..rings {
        for j in 0..sides {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    mesh(vertices, faces)
}
