//! Orientation sampling and rigid rotations about the gravity (z) axis.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{Point3, TriangleMesh};
use crate::util::fmt_sig9;

/// A (polar, azimuth) pose in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub theta: f64,
    pub phi: f64,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation { theta: 0.0, phi: 0.0 };

    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        let o = Orientation { theta, phi };
        if !(0.0..=PI).contains(&theta) || !(0.0..2.0 * PI).contains(&phi) {
            return Err(Error::InvalidArgument(format!("orientation out of range: theta {theta}, phi {phi}")));
        }
        Ok(o)
    }
}

pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationSet {
    pub orientations: Vec<Orientation>,
    pub seed: u64,
}

impl OrientationSet {
    pub fn count(&self) -> usize {
        self.orientations.len()
    }

    /// One `index theta phi` line per orientation.
    pub fn to_text(&self) -> String {
        self.orientations
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{} {} {}\n", i, fmt_sig9(o.theta), fmt_sig9(o.phi)))
            .collect()
    }

    pub fn from_text(text: &str, seed: u64) -> Result<Self> {
        let mut orientations = Vec::new();
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(ln + 1, format!("expected \"index theta phi\", got {line:?}"));
            if toks.len() != 3 {
                return Err(bad());
            }
            let index: usize = toks[0].parse().map_err(|_| bad())?;
            if index != orientations.len() {
                return Err(Error::parse(ln + 1, format!("index {index} out of sequence")));
            }
            let theta: f64 = toks[1].parse().map_err(|_| bad())?;
            let phi: f64 = toks[2].parse().map_err(|_| bad())?;
            // 9-digit rounding may push phi to exactly 2π.
            let phi = if phi >= 2.0 * PI { 0.0 } else { phi };
            orientations.push(Orientation::new(theta.clamp(0.0, PI), phi)?);
        }
        Ok(OrientationSet { orientations, seed })
    }
}

/// Draws `count` independent poses with theta ~ U[0, π] and phi ~ U[0, 2π).
pub fn sample_orientations(count: usize, seed: u64) -> Result<OrientationSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("orientation count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orientations = (0..count)
        .map(|_| {
            let theta = rng.random_range(0.0..=PI);
            let phi = rng.random_range(0.0..2.0 * PI);
            Orientation { theta, phi }
        })
        .collect();
    Ok(OrientationSet { orientations, seed })
}

/// `Rx(theta) * Rz(phi)`: spin about gravity by phi, then tilt about x by theta.
pub fn rotation_matrix(o: Orientation) -> Mat3 {
    let (st, ct) = o.theta.sin_cos();
    let (sp, cp) = o.phi.sin_cos();
    [[cp, -sp, 0.0], [ct * sp, ct * cp, -st], [st * sp, st * cp, ct]]
}

pub fn mat_vec(m: &Mat3, v: Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn apply_matrix(mesh: &TriangleMesh, m: &Mat3) -> TriangleMesh {
    mesh.map_vertices(|v| mat_vec(m, v))
}

pub fn apply_rotation(mesh: &TriangleMesh, o: Orientation) -> TriangleMesh {
    apply_matrix(mesh, &rotation_matrix(o))
}
