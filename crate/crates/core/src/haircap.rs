//! Scalp hair cap: a shell over the root-bearing part of the head, textured
//! with the first stretch of every strand.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::bvh::Bvh;
use crate::hairio::{HeadMesh, Strand};
use crate::math::{any_perpendicular, closest_point_on_triangle, Aabb, Vec2, Vec3};
use crate::stroke::Canvas;

#[derive(Debug, Error)]
pub enum CapError {
    #[error("eps_root must be positive, got {0}")]
    BadEpsRoot(f64),
    #[error("eps_cap must be positive, got {0}")]
    BadEpsCap(f64),
    #[error("resolution must be positive")]
    BadResolution,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub corner_uvs: Vec<[Vec2; 3]>,
    /// Head face of each cap triangle.
    pub source_faces: Vec<usize>,
    /// Head vertex of each cap vertex.
    pub source_vertices: Vec<usize>,
    /// Whether the uvs come from the head mesh (else per-face charts).
    pub head_uv: bool,
}

impl CapMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

fn face_bvh(head: &HeadMesh, faces: &[usize]) -> Bvh {
    let boxes: Vec<Aabb> = faces.iter().map(|&f| Aabb::from_points(head.corner(f).iter())).collect();
    Bvh::build(&boxes)
}

/// Nearest face among `faces` (index into `faces`) and barycentric weights.
fn nearest_face(head: &HeadMesh, faces: &[usize], bvh: &Bvh, p: &Vec3) -> Option<(usize, [f64; 3])> {
    let (k, _) = bvh.nearest(p, |k| {
        let [a, b, c] = head.corner(faces[k]);
        (closest_point_on_triangle(p, &a, &b, &c).point - p).norm_squared()
    })?;
    let [a, b, c] = head.corner(faces[k]);
    Some((k, closest_point_on_triangle(p, &a, &b, &c).weights))
}

/// Faces sharing at least one vertex with each face.
pub fn vertex_one_ring(head: &HeadMesh) -> Vec<Vec<usize>> {
    let mut incident = vec![Vec::new(); head.vertices.len()];
    for (f, tri) in head.triangles.iter().enumerate() {
        for &v in tri {
            incident[v].push(f);
        }
    }
    head.triangles
        .iter()
        .enumerate()
        .map(|(f, tri)| {
            let ring: BTreeSet<usize> = tri.iter().flat_map(|&v| incident[v].iter().copied()).filter(|&g| g != f).collect();
            ring.into_iter().collect()
        })
        .collect()
}

/// Head faces nearest to each strand root, deduplicated and sorted.
pub fn root_faces(head: &HeadMesh, strands: &[Strand]) -> Vec<usize> {
    if head.triangles.is_empty() {
        return Vec::new();
    }
    let all: Vec<usize> = (0..head.triangles.len()).collect();
    let bvh = face_bvh(head, &all);
    let hits: BTreeSet<usize> = strands
        .par_iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| nearest_face(head, &all, &bvh, &s.root()).map(|(k, _)| k))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    hits.into_iter().collect()
}

/// Hit faces plus their one-ring, sorted.
pub fn select_cap_faces(head: &HeadMesh, hit: &[usize]) -> Vec<usize> {
    let ring = vertex_one_ring(head);
    let set: BTreeSet<usize> = hit.iter().flat_map(|&f| std::iter::once(f).chain(ring[f].iter().copied())).collect();
    set.into_iter().collect()
}

/// Uvs of one chart per face, packed into a square grid. All charts share
/// one world-to-uv scale; uv v points up as in OBJ files.
fn auto_charts(head: &HeadMesh, faces: &[usize]) -> Vec<[Vec2; 3]> {
    let n = faces.len();
    if n == 0 {
        return Vec::new();
    }
    let grid = (n as f64).sqrt().ceil() as usize;
    let cell = 1.0 / grid as f64;
    let pad = 0.08 * cell;
    let flat: Vec<[Vec2; 3]> = faces
        .iter()
        .map(|&f| {
            let [a, b, c] = head.corner(f);
            let x = (b - a).normalize();
            let nrm = (b - a).cross(&(c - a));
            let y = nrm.cross(&x).normalize();
            [a, b, c].map(|p| Vec2::new((p - a).dot(&x), (p - a).dot(&y)))
        })
        .collect();
    let extent = flat
        .iter()
        .map(|t| {
            let lo = t[0].inf(&t[1]).inf(&t[2]);
            let hi = t[0].sup(&t[1]).sup(&t[2]);
            (hi - lo).max()
        })
        .fold(0.0, f64::max);
    let scale = (cell - 2.0 * pad) / extent;
    flat.iter()
        .enumerate()
        .map(|(k, t)| {
            let lo = t[0].inf(&t[1]).inf(&t[2]);
            let origin = Vec2::new((k % grid) as f64 * cell + pad, 1.0 - ((k / grid) + 1) as f64 * cell + pad);
            t.map(|p| origin + (p - lo) * scale)
        })
        .collect()
}

/// Extracts the cap: root-bearing faces and their one-ring, each vertex
/// pushed `eps_cap` along its head normal.
pub fn build_cap_mesh(head: &HeadMesh, strands: &[Strand], eps_cap: f64) -> Result<CapMesh, CapError> {
    if !(eps_cap > 0.0) {
        return Err(CapError::BadEpsCap(eps_cap));
    }
    let hit = root_faces(head, strands);
    if hit.is_empty() {
        warn!("no strand roots near the head; the cap is empty");
    }
    let faces = select_cap_faces(head, &hit);
    let mut remap = BTreeMap::new();
    let mut source_vertices = Vec::new();
    let mut triangles = Vec::with_capacity(faces.len());
    for &f in &faces {
        let tri = head.triangles[f].map(|v| {
            *remap.entry(v).or_insert_with(|| {
                source_vertices.push(v);
                source_vertices.len() - 1
            })
        });
        triangles.push(tri);
    }
    let vertices = source_vertices
        .iter()
        .map(|&v| head.vertices[v] + head.vertex_normals[v] * eps_cap)
        .collect();
    let (corner_uvs, head_uv) = match &head.corner_uvs {
        Some(uvs) => (faces.iter().map(|&f| uvs[f]).collect(), true),
        None => (auto_charts(head, &faces), false),
    };
    Ok(CapMesh {
        vertices,
        triangles,
        corner_uvs,
        source_faces: faces,
        source_vertices,
        head_uv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapBakeParams {
    pub eps_root: f64,
    pub resolution: usize,
    /// World-space stroke width.
    pub strand_width: f64,
    /// Stroke density at which AO reaches 0.
    pub ao_saturation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapTexture {
    pub resolution: usize,
    pub tangent: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub ao: Vec<f64>,
}

/// Image position of a cap uv (v up, image rows down).
pub fn cap_texel(uv: Vec2, resolution: usize) -> Vec2 {
    Vec2::new(uv.x * resolution as f64, (1.0 - uv.y) * resolution as f64)
}

/// Leading part of a polyline with arc length `len` (or all of it).
pub fn root_subsegment(points: &[Vec3], len: f64) -> Vec<Vec3> {
    let mut out = Vec::new();
    let Some(first) = points.first() else { return out };
    out.push(*first);
    let mut left = len;
    for w in points.windows(2) {
        let d = (w[1] - w[0]).norm();
        if d >= left {
            if d > 0.0 {
                out.push(w[0] + (w[1] - w[0]) * (left / d));
            }
            return out;
        }
        left -= d;
        out.push(w[1]);
    }
    out
}

/// Cap-face frame: unit directions of increasing u, of n × u, and the face normal.
fn face_frame(head: &HeadMesh, face: usize, uv: &[Vec2; 3]) -> [Vec3; 3] {
    let [a, b, c] = head.corner(face);
    let n = head.face_normal(face);
    let (e1, e2) = (b - a, c - a);
    let (d1, d2) = (uv[1] - uv[0], uv[2] - uv[0]);
    let det = d1.x * d2.y - d2.x * d1.y;
    let dpdu = if det.abs() > 1e-300 { (e1 * d2.y - e2 * d1.y) / det } else { Vec3::zeros() };
    let across = (dpdu - n * dpdu.dot(&n)).try_normalize(1e-300).unwrap_or_else(|| any_perpendicular(&n));
    [across, n.cross(&across), n]
}

/// Draws the first `eps_root` of every strand into cap uv space.
pub fn bake_cap_texture(head: &HeadMesh, strands: &[Strand], cap: &CapMesh, p: &CapBakeParams) -> Result<CapTexture, CapError> {
    if !(p.eps_root > 0.0) {
        return Err(CapError::BadEpsRoot(p.eps_root));
    }
    if p.resolution == 0 {
        return Err(CapError::BadResolution);
    }
    let res = p.resolution;
    let n = res * res;
    let mut tex = CapTexture {
        resolution: res,
        tangent: vec![[0.0; 3]; n],
        alpha: vec![0.0; n],
        ao: vec![1.0; n],
    };
    if cap.is_empty() || strands.is_empty() {
        return Ok(tex);
    }
    let bvh = face_bvh(head, &cap.source_faces);
    let frames: Vec<[Vec3; 3]> = cap
        .source_faces
        .iter()
        .zip(&cap.corner_uvs)
        .map(|(&f, uv)| face_frame(head, f, uv))
        .collect();
    // Texels per world unit of each face.
    let scale: Vec<f64> = cap
        .source_faces
        .iter()
        .zip(&cap.corner_uvs)
        .map(|(&f, uv)| {
            let [a, b, c] = head.corner(f);
            let world = (b - a).cross(&(c - a)).norm();
            let [ta, tb, tc] = uv.map(|u| cap_texel(u, res));
            let (d1, d2) = (tb - ta, tc - ta);
            ((d1.x * d2.y - d2.x * d1.y).abs() / world).sqrt()
        })
        .collect();

    // Per strand: runs of consecutive points on the same cap face.
    const SUBDIV: usize = 16;
    let runs: Vec<Vec<(usize, Vec<Vec2>, Vec3)>> = strands
        .par_iter()
        .map(|s| {
            let sub = root_subsegment(&s.samples, p.eps_root);
            if sub.len() < 2 {
                return Vec::new();
            }
            let mut pts = Vec::new();
            for w in sub.windows(2) {
                for k in 0..SUBDIV {
                    pts.push(w[0] + (w[1] - w[0]) * (k as f64 / SUBDIV as f64));
                }
            }
            pts.push(*sub.last().unwrap());
            let dir = (sub[sub.len() - 1] - sub[0]).try_normalize(1e-300).unwrap_or_else(Vec3::zeros);
            let mut out: Vec<(usize, Vec<Vec2>, Vec3)> = Vec::new();
            for q in &pts {
                let Some((k, w)) = nearest_face(head, &cap.source_faces, &bvh, q) else { continue };
                let uv = cap.corner_uvs[k];
                let t = cap_texel(uv[0] * w[0] + uv[1] * w[1] + uv[2] * w[2], res);
                match out.last_mut() {
                    Some((face, run, _)) if *face == k => run.push(t),
                    _ => out.push((k, vec![t], dir)),
                }
            }
            out
        })
        .collect();

    let mut canvas = Canvas::new(res, res);
    let mut owners = Vec::new();
    for strand_runs in &runs {
        for (face, run, dir) in strand_runs {
            canvas.draw_polyline(owners.len(), run, 0.5 * p.strand_width * scale[*face]);
            owners.push((*face, *dir));
        }
    }
    let sat = p.ao_saturation.max(1e-12);
    for (i, hit) in canvas.hits.iter().enumerate() {
        let Some(h) = hit else { continue };
        let (face, dir) = owners[h.strand];
        let fr = frames[face];
        let t = Vec3::new(dir.dot(&fr[0]), dir.dot(&fr[1]), dir.dot(&fr[2]));
        tex.tangent[i] = [(t.x + 1.0) * 0.5, (t.y + 1.0) * 0.5, (t.z + 1.0) * 0.5];
        tex.alpha[i] = h.coverage;
        tex.ao[i] = 1.0 - (canvas.density[i] / sat).min(1.0);
    }
    Ok(tex)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub const CAP_OBJ: &str = "cap_mesh.obj";

/// Writes `cap_mesh.obj` plus `cap_tangent.png`, `cap_alpha.png` and `cap_ao.png`.
pub fn export_cap(cap: &CapMesh, tex: &CapTexture, dir: &Path) -> Result<(), CapError> {
    let mut obj = std::io::BufWriter::new(std::fs::File::create(dir.join(CAP_OBJ))?);
    writeln!(obj, "# hair cap: {} faces", cap.triangles.len())?;
    writeln!(obj, "o hair_cap")?;
    for v in &cap.vertices {
        writeln!(obj, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for uv in cap.corner_uvs.iter().flatten() {
        writeln!(obj, "vt {} {}", uv.x, uv.y)?;
    }
    for (k, t) in cap.triangles.iter().enumerate() {
        let [a, b, c] = t.map(|i| i + 1);
        let u = 3 * k + 1;
        writeln!(obj, "f {a}/{u} {b}/{} {c}/{}", u + 1, u + 2)?;
    }
    obj.flush()?;
    let r = tex.resolution as u32;
    let at = |x: u32, y: u32| y as usize * tex.resolution + x as usize;
    RgbImage::from_fn(r, r, |x, y| {
        let t = tex.tangent[at(x, y)];
        Rgb([to_u8(t[0]), to_u8(t[1]), to_u8(t[2])])
    })
    .save(dir.join("cap_tangent.png"))?;
    GrayImage::from_fn(r, r, |x, y| Luma([to_u8(tex.alpha[at(x, y)])])).save(dir.join("cap_alpha.png"))?;
    GrayImage::from_fn(r, r, |x, y| Luma([to_u8(tex.ao[at(x, y)])])).save(dir.join("cap_ao.png"))?;
    Ok(())
}
