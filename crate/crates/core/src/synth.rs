//! Synthetic fixtures: an icosphere head and a procedurally grown wig.
//!
//! These stand in for scanned data in tests, benchmarks and the CLI's
//! `synth` subcommand.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hairio::{resample_strand, HairModel, HeadMesh, Strand};
use crate::math::Vec3;

/// Subdivided icosahedron with analytic (radial) vertex normals.
pub fn icosphere(subdivisions: usize, radius: f64, center: Vec3) -> HeadMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let normals = verts.clone();
    let vertices = verts.iter().map(|v| center + v * radius).collect();
    HeadMesh {
        vertices,
        triangles: faces,
        vertex_normals: normals,
        corner_uvs: None,
    }
}

/// Parameters for [`synthetic_wig`].
#[derive(Debug, Clone)]
pub struct WigParams {
    pub head_radius: f64,
    pub strands: usize,
    pub samples: usize,
    /// Number of clumps the roots are drawn around.
    pub locks: usize,
    pub length: f64,
    /// Hair never comes closer than this to the scalp.
    pub clearance: f64,
    pub seed: u64,
}

impl Default for WigParams {
    fn default() -> Self {
        Self {
            head_radius: 1.0,
            strands: 500,
            samples: 32,
            locks: 16,
            length: 1.1,
            clearance: 0.04,
            seed: 1,
        }
    }
}

/// Grows straight-ish strands from the upper half of a sphere centered at
/// the origin: each strand leaves along the scalp normal, bends under a
/// constant downward pull and slides over the scalp at a fixed clearance.
pub fn synthetic_wig(params: &WigParams) -> HairModel {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let lock_centers: Vec<Vec3> = (0..params.locks.max(1))
        .map(|_| sample_cap_direction(&mut rng, 0.25))
        .collect();
    let shell = params.head_radius + params.clearance;
    let raw_points = 96;
    let step = params.length / (raw_points - 1) as f64;
    let strands = (0..params.strands)
        .map(|_| {
            let lock = lock_centers[rng.gen_range(0..lock_centers.len())];
            let jitter = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * 0.12;
            let mut dir_root = (lock + jitter).normalize();
            if dir_root.y < 0.05 {
                dir_root.y = 0.05;
                dir_root = dir_root.normalize();
            }
            let mut p = dir_root * shell;
            let mut dir = dir_root;
            let pull = 0.08 + 0.04 * rng.gen::<f64>();
            let mut pts = Vec::with_capacity(raw_points);
            pts.push(p);
            for _ in 1..raw_points {
                dir = (dir + Vec3::new(0.0, -pull, 0.0)).normalize();
                p += dir * step;
                let r = p.norm();
                if r < shell {
                    p *= shell / r;
                    // Keep sliding tangentially.
                    let n = p / shell;
                    dir = (dir - n * dir.dot(&n)).try_normalize(1e-12).unwrap_or(dir);
                }
                pts.push(p);
            }
            resample_strand(&pts, params.samples).expect("grown strand has positive length")
        })
        .collect::<Vec<Strand>>();
    HairModel::new(strands).expect("wig has strands")
}

fn sample_cap_direction(rng: &mut ChaCha8Rng, min_y: f64) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 && v.y / n >= min_y {
            return v / n;
        }
    }
}
