//! Signed distance to a triangle mesh.
//!
//! The magnitude is the exact distance to the closest triangle (BVH query).
//! On closed meshes the sign comes from the angle-weighted pseudonormal of
//! the closest feature; open meshes fall back to ray-parity inside tests.

use std::collections::HashMap;
use std::f64::consts::PI;

use log::warn;

use crate::bvh::Bvh;
use crate::hairio::HeadMesh;
use crate::math::{closest_point_on_triangle, Aabb, TriangleFeature, Vec3};

/// Fixed, deliberately irrational-looking ray direction for parity tests.
const PARITY_DIR: [f64; 3] = [0.538_516_480_713_450_4, 0.718_190_249_141_603, 0.440_898_460_239_137_14];

#[derive(Debug, Clone)]
pub struct MeshSdf {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
    bvh: Bvh,
    closed: bool,
}

/// Closest-feature query result.
#[derive(Debug, Clone, Copy)]
pub struct SdfSample {
    pub value: f64,
    /// Spatial gradient of the signed distance.
    pub gradient: Vec3,
    pub closest: Vec3,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl MeshSdf {
    pub fn new(mesh: &HeadMesh) -> Self {
        let vertices = mesh.vertices.clone();
        let triangles = mesh.triangles.clone();
        let face_normals: Vec<Vec3> = (0..triangles.len()).map(|t| mesh.face_normal(t)).collect();
        let mut vertex_normals = vec![Vec3::zeros(); vertices.len()];
        let mut edge_normals: HashMap<(usize, usize), Vec3> = HashMap::new();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            let n = face_normals[t];
            for k in 0..3 {
                let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let e1 = (vertices[b] - vertices[a]).normalize();
                let e2 = (vertices[c] - vertices[a]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_normals[a] += n * angle;
                // Each incident face contributes an angle of pi at an edge.
                *edge_normals.entry(edge_key(a, b)).or_insert_with(Vec3::zeros) += n * PI;
                *edge_count.entry(edge_key(a, b)).or_default() += 1;
            }
        }
        for n in vertex_normals.iter_mut() {
            *n = n.try_normalize(1e-300).unwrap_or_else(Vec3::zeros);
        }
        for n in edge_normals.values_mut() {
            *n = n.try_normalize(1e-300).unwrap_or_else(Vec3::zeros);
        }
        let closed = !triangles.is_empty() && edge_count.values().all(|&c| c == 2);
        if !closed {
            warn!("head mesh is not closed; SDF sign uses ray parity");
        }
        let boxes: Vec<Aabb> = (0..triangles.len())
            .map(|t| Aabb::from_points(triangles[t].iter().map(|&i| &vertices[i])))
            .collect();
        Self {
            bvh: Bvh::build(&boxes),
            vertices,
            triangles,
            face_normals,
            vertex_normals,
            edge_normals,
            closed,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    /// Unsigned distance to the mesh.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.bvh
            .nearest(p, |t| {
                let [a, b, c] = self.corners(t);
                (closest_point_on_triangle(p, &a, &b, &c).point - p).norm_squared()
            })
            .map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }

    pub fn sample(&self, p: &Vec3) -> SdfSample {
        let (t, d2) = self
            .bvh
            .nearest(p, |t| {
                let [a, b, c] = self.corners(t);
                (closest_point_on_triangle(p, &a, &b, &c).point - p).norm_squared()
            })
            .expect("mesh has triangles");
        let [a, b, c] = self.corners(t);
        let proj = closest_point_on_triangle(p, &a, &b, &c);
        let tri = self.triangles[t];
        let pseudo = match proj.feature {
            TriangleFeature::Face => self.face_normals[t],
            TriangleFeature::Edge(k) => self.edge_normals[&edge_key(tri[k], tri[(k + 1) % 3])],
            TriangleFeature::Vertex(k) => self.vertex_normals[tri[k]],
        };
        let diff = p - proj.point;
        let dist = d2.sqrt();
        let inside = if self.closed {
            diff.dot(&pseudo) < 0.0
        } else {
            self.inside_by_parity(p)
        };
        let sign = if inside { -1.0 } else { 1.0 };
        let gradient = if dist > 0.0 { diff / dist * sign } else { pseudo };
        SdfSample {
            value: sign * dist,
            gradient,
            closest: proj.point,
        }
    }

    pub fn value(&self, p: &Vec3) -> f64 {
        self.sample(p).value
    }

    /// Odd number of crossings along a fixed ray means inside.
    pub fn inside_by_parity(&self, p: &Vec3) -> bool {
        let dir = Vec3::from(PARITY_DIR);
        let mut crossings = 0usize;
        self.bvh.for_each_ray_candidate(p, &dir, f64::INFINITY, |t| {
            let [a, b, c] = self.corners(t);
            if ray_hits_triangle(p, &dir, &a, &b, &c) {
                crossings += 1;
            }
        });
        crossings % 2 == 1
    }
}

/// Moller-Trumbore test for hits with parameter t > 0.
pub fn ray_hits_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    ray_triangle(origin, dir, a, b, c).is_some()
}

/// Hit parameter of a ray against a triangle, if positive.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    (t > 0.0).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::icosphere;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sign_agrees_with_parity() {
        let mesh = icosphere(2, 1.0, Vec3::zeros());
        let sdf = MeshSdf::new(&mesh);
        assert!(sdf.is_closed());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let p = Vec3::new(rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3));
            let s = sdf.sample(&p);
            assert_eq!(s.value < 0.0, sdf.inside_by_parity(&p), "{p:?}");
        }
    }

    #[test]
    fn gradient_points_away_from_surface() {
        let mesh = icosphere(3, 1.0, Vec3::zeros());
        let sdf = MeshSdf::new(&mesh);
        let p = Vec3::new(0.1, 0.2, 0.3);
        let s = sdf.sample(&p);
        let h = 1e-6;
        for a in 0..3 {
            let mut pp = p;
            pp[a] += h;
            let mut pm = p;
            pm[a] -= h;
            let fd = (sdf.value(&pp) - sdf.value(&pm)) / (2.0 * h);
            assert!((fd - s.gradient[a]).abs() < 1e-5);
        }
        assert!(s.value < 0.0);
        assert!((s.value + (1.0 - p.norm())).abs() < 0.02);
    }

    #[test]
    fn open_mesh_uses_parity() {
        let mut mesh = icosphere(1, 1.0, Vec3::zeros());
        mesh.triangles.pop();
        let sdf = MeshSdf::new(&mesh);
        assert!(!sdf.is_closed());
        let q = Vec3::new(0.0, 0.0, 0.1);
        assert_eq!(sdf.value(&q) < 0.0, sdf.inside_by_parity(&q));
        assert!(sdf.value(&Vec3::new(3.0, 0.0, 0.0)) > 0.0);
    }
}
