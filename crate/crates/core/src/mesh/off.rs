use std::fmt::Write as _;

use super::{Point3, TriangleMesh};
use crate::error::{Error, Result};
use crate::util::fmt_sig9;

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::parse(line, format!("non-numeric {what} token {tok:?}")))
}

/// Parses OFF text. Polygons with more than three corners are fan-triangulated
/// from their first corner; fan triangles that collapse onto a repeated index
/// are dropped.
pub fn parse_off(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::parse(line, "file is not valid UTF-8 text")
    })?;
    let total_lines = text.lines().count();
    let mut lines = content_lines(text);

    let (mut line_no, mut first) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    // "OFF" alone, "OFF V F E", or a bare counts line.
    if let Some(rest) = first.strip_prefix("OFF") {
        let rest = rest.trim();
        if rest.is_empty() {
            (line_no, first) = lines.next().ok_or_else(|| Error::parse(total_lines + 1, "missing counts line"))?;
        } else {
            first = rest;
        }
    } else if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
        return Err(Error::parse(line_no, format!("malformed header {first:?}")));
    }
    let counts: Vec<&str> = first.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(Error::parse(line_no, "counts line must hold vertex and face counts"));
    }
    let n_vertices: usize = parse_num(counts[0], line_no, "vertex count")?;
    let n_polygons: usize = parse_num(counts[1], line_no, "face count")?;

    let mut vertices: Vec<Point3> = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (ln, line) =
            lines.next().ok_or_else(|| Error::parse(total_lines + 1, "truncated file: missing vertex lines"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(ln, "vertex line needs 3 coordinates"));
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = parse_num::<f64>(toks[k], ln, "coordinate")?;
            if !p[k].is_finite() {
                return Err(Error::parse(ln, "non-finite coordinate"));
            }
        }
        vertices.push(p);
    }

    let mut faces = Vec::with_capacity(n_polygons);
    for _ in 0..n_polygons {
        let (ln, line) =
            lines.next().ok_or_else(|| Error::parse(total_lines + 1, "truncated file: missing face lines"))?;
        let mut toks = line.split_whitespace();
        let k: usize = parse_num(toks.next().unwrap_or(""), ln, "polygon size")?;
        if k < 3 {
            return Err(Error::parse(ln, format!("polygon with {k} corners (need at least 3)")));
        }
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            let tok =
                toks.next().ok_or_else(|| Error::parse(ln, format!("polygon declares {k} corners but lists fewer")))?;
            let i: usize = parse_num(tok, ln, "vertex index")?;
            if i >= n_vertices {
                return Err(Error::parse(ln, format!("vertex index {i} out of range (vertex count {n_vertices})")));
            }
            idx.push(i as u32);
        }
        for j in 1..k - 1 {
            let tri = [idx[0], idx[j], idx[j + 1]];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                faces.push(tri);
            }
        }
    }

    let mesh = TriangleMesh { vertices, faces, class_label: None, source_path: None };
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_off(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = String::with_capacity(32 * (mesh.vertices.len() + mesh.faces.len()) + 32);
    let _ = writeln!(out, "OFF\n{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", fmt_sig9(v[0]), fmt_sig9(v[1]), fmt_sig9(v[2]));
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use proptest::prelude::*;

    #[test]
    fn minimal_file() {
        let m = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn fused_header_and_headerless() {
        let a = parse_off(b"OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        let b = parse_off(b"OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        let c = parse_off(b"3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    fn cube_quads_off() -> String {
        let mut s = String::from("OFF\n8 6 0\n");
        for i in 0..8 {
            s += &format!("{} {} {}\n", i & 1, (i >> 1) & 1, (i >> 2) & 1);
        }
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        for q in quads {
            s += &format!("4 {} {} {} {}\n", q[0], q[1], q[2], q[3]);
        }
        s
    }

    #[test]
    fn cube_quads_are_fan_triangulated() {
        let m = parse_off(cube_quads_off().as_bytes()).unwrap();
        assert_eq!(m.vertex_count(), 8);
        assert_eq!(m.face_count(), 12);
        assert_eq!(m.faces[0], [0, 2, 3]);
        assert_eq!(m.faces[1], [0, 3, 1]);
    }

    #[test]
    fn index_out_of_range_names_line() {
        let err = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 99\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("99"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_paths() {
        let cases: &[(&[u8], usize)] = &[
            (b"PLY\n3 1 0\n", 1),
            (b"OFF\n3 1 0\n0 0 x\n1 0 0\n0 1 0\n3 0 1 2\n", 3),
            (b"OFF\n3 1 0\n0 0 0\n1 0 0\n", 5),
            (b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n", 6),
            (b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n", 6),
            (b"OFF\n3 1 0\n0 0 0\n1 0\n0 1 0\n3 0 1 2\n", 4),
            (b"", 1),
        ];
        for (text, want) in cases {
            match parse_off(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, *want, "{:?}", String::from_utf8_lossy(text)),
                other => panic!("{:?}: expected parse error, got {other:?}", String::from_utf8_lossy(text)),
            }
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let m = parse_off(b"OFF\n# made by hand\n\n3 1 0\n0 0 0\n1 0 0 # tip\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.face_count(), 1);
    }

    #[test]
    fn write_starts_with_header() {
        let m = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2").unwrap();
        let text = write_off(&m);
        assert!(text.starts_with(b"OFF\n3 1 0"));
    }

    #[test]
    fn cube_round_trip() {
        let m = shapes::cuboid([1.3, 0.7, 2.1]).translated([0.123456789, -4.0, 1e-3]);
        let back = parse_off(&write_off(&m)).unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in m.vertices.iter().zip(&back.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_identity(
            coords in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 3..40),
            seed in any::<u64>(),
        ) {
            let n = coords.len() as u32;
            let vertices: Vec<Point3> = coords.iter().map(|&(x, y, z)| [x, y, z]).collect();
            let faces: Vec<[u32; 3]> = (0..n)
                .map(|i| {
                    let a = (i as u64 ^ seed) as u32 % n;
                    [a, (a + 1) % n, (a + 2) % n]
                })
                .collect();
            let m = TriangleMesh::new(vertices, faces).unwrap();
            let back = parse_off(&write_off(&m)).unwrap();
            prop_assert_eq!(&back.faces, &m.faces);
            for (a, b) in m.vertices.iter().zip(&back.vertices) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-6);
                }
            }
        }
    }
}
