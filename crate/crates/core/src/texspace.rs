//! Explicit card textures: strands stored as uv polylines on a card chart,
//! with a normal offset and a free 3D tangent per sample.
//!
//! A 3D point is recovered from a chart position by locating the chart
//! triangle that contains it, blending that triangle's world vertices with
//! the chart barycentrics and adding `z` along the triangle's unit normal.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::cardgeom::{segment_tangents, CardGeometry};
use crate::cluster::StrandCluster;
use crate::hairio::HairModel;
use crate::math::{closest_point_on_triangle, Aabb, Vec2, Vec3};

#[derive(Debug, Error)]
pub enum TexError {
    #[error("cluster has no member strands")]
    EmptyCluster,
    #[error("bad texture blob: {0}")]
    BadBlob(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Foot of a point on a card: triangle, barycentric weights of its first
/// two corners (the third is `1 - u - v`) and offset along the face normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub triangle_index: usize,
    pub barycentric: Vec2,
    pub z: f64,
}

impl SurfacePoint {
    pub fn weights(&self) -> [f64; 3] {
        let (u, v) = (self.barycentric.x, self.barycentric.y);
        [u, v, 1.0 - u - v]
    }
}

/// Unit face normal of card triangle `t`.
pub fn face_normal(card: &CardGeometry, t: usize) -> Vec3 {
    let [a, b, c] = card.triangle(t);
    (b - a).cross(&(c - a)).normalize()
}

fn surface_point(card: &CardGeometry, p: &Vec3, t: usize) -> (SurfacePoint, f64) {
    let [a, b, c] = card.triangle(t);
    let proj = closest_point_on_triangle(p, &a, &b, &c);
    let d2 = (proj.point - p).norm_squared();
    let z = (p - proj.point).dot(&face_normal(card, t));
    (
        SurfacePoint {
            triangle_index: t,
            barycentric: Vec2::new(proj.weights[0], proj.weights[1]),
            z,
        },
        d2,
    )
}

/// Brute-force closest point over every triangle; ties keep the lowest index.
pub fn closest_point_on_card(p: &Vec3, card: &CardGeometry) -> SurfacePoint {
    let mut best: Option<(SurfacePoint, f64)> = None;
    for t in 0..card.triangles.len() {
        let (sp, d2) = surface_point(card, p, t);
        if best.as_ref().map_or(true, |b| d2 < b.1) {
            best = Some((sp, d2));
        }
    }
    best.expect("card has triangles").0
}

/// Closest-point queries against one card through a triangle BVH.
#[derive(Debug, Clone)]
pub struct CardLocator<'a> {
    card: &'a CardGeometry,
    bvh: Bvh,
}

impl<'a> CardLocator<'a> {
    pub fn new(card: &'a CardGeometry) -> Self {
        let boxes: Vec<Aabb> = (0..card.triangles.len())
            .map(|t| Aabb::from_points(card.triangle(t).iter()))
            .collect();
        Self {
            card,
            bvh: Bvh::build(&boxes),
        }
    }

    pub fn closest(&self, p: &Vec3) -> SurfacePoint {
        let (t, _) = self
            .bvh
            .nearest(p, |t| surface_point(self.card, p, t).1)
            .expect("card has triangles");
        surface_point(self.card, p, t).0
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.bvh
            .nearest(p, |t| surface_point(self.card, p, t).1)
            .map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }
}

/// Chart position of a surface point.
pub fn chart_uv(card: &CardGeometry, sp: &SurfacePoint) -> Vec2 {
    let uv = card.triangle_uv(sp.triangle_index);
    let w = sp.weights();
    uv[0] * w[0] + uv[1] * w[1] + uv[2] * w[2]
}

/// One strand in card texture space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexStrand {
    /// Index of the strand in the source hair model.
    pub source: usize,
    pub uv: Vec<Vec2>,
    pub z: Vec<f64>,
    pub tangents: Vec<Vec3>,
    pub width: f64,
}

impl TexStrand {
    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CardTexture {
    pub strands: Vec<TexStrand>,
}

const BLOB_MAGIC: &[u8; 4] = b"CTEX";
const BLOB_VERSION: u32 = 1;

impl CardTexture {
    pub fn sample_count(&self) -> usize {
        self.strands.iter().map(|s| s.len()).sum()
    }

    /// Largest absolute normal offset over all samples.
    pub fn z_max(&self) -> f64 {
        self.strands
            .iter()
            .flat_map(|s| s.z.iter())
            .fold(0.0, |m, z| m.max(z.abs()))
    }

    pub fn write_blob<W: Write>(&self, mut w: W) -> Result<(), TexError> {
        w.write_all(BLOB_MAGIC)?;
        w.write_u32::<LittleEndian>(BLOB_VERSION)?;
        w.write_u64::<LittleEndian>(self.strands.len() as u64)?;
        for s in &self.strands {
            w.write_u64::<LittleEndian>(s.source as u64)?;
            w.write_u64::<LittleEndian>(s.len() as u64)?;
            w.write_f64::<LittleEndian>(s.width)?;
        }
        for s in &self.strands {
            for j in 0..s.len() {
                for x in [
                    s.uv[j].x,
                    s.uv[j].y,
                    s.z[j],
                    s.tangents[j].x,
                    s.tangents[j].y,
                    s.tangents[j].z,
                ] {
                    w.write_f64::<LittleEndian>(x)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(mut r: R) -> Result<Self, TexError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BLOB_MAGIC {
            return Err(TexError::BadBlob("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != BLOB_VERSION {
            return Err(TexError::BadBlob(format!("unsupported version {version}")));
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut heads = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let source = r.read_u64::<LittleEndian>()? as usize;
            let n = r.read_u64::<LittleEndian>()? as usize;
            let width = r.read_f64::<LittleEndian>()?;
            heads.push((source, n, width));
        }
        let mut strands = Vec::with_capacity(count);
        for (source, n, width) in heads {
            let mut s = TexStrand {
                source,
                uv: Vec::with_capacity(n),
                z: Vec::with_capacity(n),
                tangents: Vec::with_capacity(n),
                width,
            };
            for _ in 0..n {
                let mut v = [0.0; 6];
                for x in &mut v {
                    *x = r.read_f64::<LittleEndian>()?;
                }
                s.uv.push(Vec2::new(v[0], v[1]));
                s.z.push(v[2]);
                s.tangents.push(Vec3::new(v[3], v[4], v[5]));
            }
            strands.push(s);
        }
        Ok(Self { strands })
    }

    pub fn save(&self, path: &Path) -> Result<(), TexError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_blob(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TexError> {
        Self::read_blob(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Projects one strand's samples onto a card.
///
/// Tangents are the forward differences of the strand as the card
/// reconstructs it, so the stored tangents and the lifted geometry agree
/// exactly at the start. Where two lifted samples coincide the input
/// strand's own direction is used.
pub fn project_strand(
    locator: &CardLocator,
    model: &HairModel,
    index: usize,
    width: f64,
) -> Result<TexStrand, TexError> {
    let strand = &model.strands[index];
    let original = segment_tangents(&strand.samples).map_err(|_| {
        TexError::BadBlob(format!("strand {index} has a zero-length segment"))
    })?;
    let mut uv = Vec::with_capacity(strand.len());
    let mut z = Vec::with_capacity(strand.len());
    for p in &strand.samples {
        let sp = locator.closest(p);
        uv.push(clamp_uv(chart_uv(locator.card, &sp)));
        z.push(sp.z);
    }
    let lifted: Vec<Vec3> = uv
        .iter()
        .zip(&z)
        .map(|(c, h)| reconstruct_point(locator.card, *c, *h).0)
        .collect();
    let n = lifted.len();
    let tangents = (0..n)
        .map(|j| {
            let k = j.min(n.saturating_sub(2));
            (lifted[k + 1] - lifted[k]).try_normalize(1e-12).unwrap_or(original[j])
        })
        .collect();
    Ok(TexStrand {
        source: index,
        uv,
        z,
        tangents,
        width,
    })
}

/// Projects every member of `cluster` onto `card`.
pub fn project_cluster(
    cluster: &StrandCluster,
    card: &CardGeometry,
    model: &HairModel,
    width: f64,
) -> Result<CardTexture, TexError> {
    if cluster.member_indices.is_empty() {
        return Err(TexError::EmptyCluster);
    }
    let locator = CardLocator::new(card);
    let strands = cluster
        .member_indices
        .par_iter()
        .map(|&i| project_strand(&locator, model, i, width))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CardTexture { strands })
}

/// Projects the members of a crossed pair: each strand goes to whichever
/// card it lies closer to (summed sample distance, ties to the first).
pub fn project_crossed(
    cluster: &StrandCluster,
    first: &CardGeometry,
    second: &CardGeometry,
    model: &HairModel,
    width: f64,
) -> Result<(CardTexture, CardTexture), TexError> {
    if cluster.member_indices.is_empty() {
        return Err(TexError::EmptyCluster);
    }
    let la = CardLocator::new(first);
    let lb = CardLocator::new(second);
    let picks: Vec<(bool, TexStrand)> = cluster
        .member_indices
        .par_iter()
        .map(|&i| {
            let samples = &model.strands[i].samples;
            let da: f64 = samples.iter().map(|p| la.distance(p)).sum();
            let db: f64 = samples.iter().map(|p| lb.distance(p)).sum();
            let use_second = db < da;
            let loc = if use_second { &lb } else { &la };
            project_strand(loc, model, i, width).map(|s| (use_second, s))
        })
        .collect::<Result<_, _>>()?;
    let mut a = CardTexture::default();
    let mut b = CardTexture::default();
    for (second, s) in picks {
        if second {
            b.strands.push(s);
        } else {
            a.strands.push(s);
        }
    }
    Ok((a, b))
}

pub fn clamp_uv(uv: Vec2) -> Vec2 {
    Vec2::new(uv.x.clamp(0.0, 1.0), uv.y.clamp(0.0, 1.0))
}

/// Chart triangle containing a uv position and the barycentric weights of
/// its three corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartLocation {
    pub triangle: usize,
    pub weights: [f64; 3],
    /// The input lay outside the chart and was clamped onto it.
    pub clamped: bool,
}

/// Finds the chart triangle of `uv`. On shared edges the lower triangle
/// index wins.
pub fn locate_uv(card: &CardGeometry, uv: Vec2) -> ChartLocation {
    let clamped_uv = clamp_uv(uv);
    let clamped = clamped_uv != uv;
    let v = clamped_uv.y;
    let quads = card.quads();
    // First quad whose far edge reaches v.
    let mut k = (0..quads)
        .position(|k| card.uv_layout[2 * k + 2].y >= v)
        .unwrap_or(quads - 1);
    // Quads with zero chart length cannot hold a point.
    while k + 1 < quads && card.uv_layout[2 * k + 2].y <= card.uv_layout[2 * k].y {
        k += 1;
    }
    let (v0, v1) = (card.uv_layout[2 * k].y, card.uv_layout[2 * k + 2].y);
    let s = if v1 > v0 { (v - v0) / (v1 - v0) } else { 0.0 };
    let u = clamped_uv.x;
    let triangle = if u + s <= 1.0 { 2 * k } else { 2 * k + 1 };
    let weights = chart_weights(card, triangle, clamped_uv);
    ChartLocation {
        triangle,
        weights,
        clamped,
    }
}

/// Inverse of the 2x2 chart map of triangle `t`: columns are
/// `uv0 - uv2` and `uv1 - uv2`.
fn chart_inverse(card: &CardGeometry, t: usize) -> [[f64; 2]; 2] {
    let [a, b, c] = card.triangle_uv(t);
    let (m00, m10) = (a.x - c.x, a.y - c.y);
    let (m01, m11) = (b.x - c.x, b.y - c.y);
    let det = m00 * m11 - m01 * m10;
    [[m11 / det, -m01 / det], [-m10 / det, m00 / det]]
}

fn chart_weights(card: &CardGeometry, t: usize, uv: Vec2) -> [f64; 3] {
    let c = card.triangle_uv(t)[2];
    let inv = chart_inverse(card, t);
    let d = uv - c;
    let alpha = inv[0][0] * d.x + inv[0][1] * d.y;
    let beta = inv[1][0] * d.x + inv[1][1] * d.y;
    [alpha, beta, 1.0 - alpha - beta]
}

/// World position of chart point `uv` lifted by `z` along the face normal.
pub fn reconstruct_point(card: &CardGeometry, uv: Vec2, z: f64) -> (Vec3, ChartLocation) {
    let loc = locate_uv(card, uv);
    let [a, b, c] = card.triangle(loc.triangle);
    let w = loc.weights;
    let p = a * w[0] + b * w[1] + c * w[2] + face_normal(card, loc.triangle) * z;
    (p, loc)
}

/// Orthonormal frame of card triangle `t`: across the card (increasing u),
/// along it (increasing v), and the face normal.
pub fn chart_frame(card: &CardGeometry, t: usize) -> [Vec3; 3] {
    let [p0, p1, p2] = card.triangle(t);
    let inv = chart_inverse(card, t);
    // d(p)/d(uv) = [p0 - p2, p1 - p2] * inv
    let (a, b) = (p0 - p2, p1 - p2);
    let dpu = a * inv[0][0] + b * inv[1][0];
    let dpv = a * inv[0][1] + b * inv[1][1];
    let along = dpv.try_normalize(1e-300).unwrap_or_else(Vec3::y);
    let across = (dpu - along * along.dot(&dpu))
        .try_normalize(1e-300)
        .unwrap_or_else(|| crate::math::any_perpendicular(&along));
    [across, along, across.cross(&along)]
}

/// Reverse pass of [`reconstruct_point`]. Accumulates into `g_vertices`
/// (one entry per card vertex) and returns the gradient with respect to uv.
pub fn reconstruct_point_backward(
    card: &CardGeometry,
    loc: &ChartLocation,
    z: f64,
    g_x: &Vec3,
    g_vertices: &mut [Vec3],
) -> Vec2 {
    let tri = card.triangles[loc.triangle];
    let [p0, p1, p2] = card.triangle(loc.triangle);
    let w = loc.weights;
    for k in 0..3 {
        g_vertices[tri[k]] += g_x * w[k];
    }
    if z != 0.0 {
        let e1 = p1 - p0;
        let e2 = p2 - p0;
        let c = e1.cross(&e2);
        let len = c.norm();
        let n = c / len;
        let g_c = (g_x - n * n.dot(g_x)) * (z / len);
        let g_e1 = e2.cross(&g_c);
        let g_e2 = g_c.cross(&e1);
        g_vertices[tri[1]] += g_e1;
        g_vertices[tri[2]] += g_e2;
        g_vertices[tri[0]] -= g_e1 + g_e2;
    }
    if loc.clamped {
        return Vec2::zeros();
    }
    let g_alpha = g_x.dot(&(p0 - p2));
    let g_beta = g_x.dot(&(p1 - p2));
    let inv = chart_inverse(card, loc.triangle);
    Vec2::new(
        inv[0][0] * g_alpha + inv[1][0] * g_beta,
        inv[0][1] * g_alpha + inv[1][1] * g_beta,
    )
}

/// Reconstructs every strand of `texture` on `card`.
pub fn reconstruct(texture: &CardTexture, card: &CardGeometry) -> Vec<Vec<Vec3>> {
    let mut clamped = 0usize;
    let out = texture
        .strands
        .iter()
        .map(|s| {
            s.uv.iter()
                .zip(&s.z)
                .map(|(uv, z)| {
                    let (p, loc) = reconstruct_point(card, *uv, *z);
                    clamped += loc.clamped as usize;
                    p
                })
                .collect()
        })
        .collect();
    if clamped > 0 {
        warn!("{clamped} texture samples lay outside the card chart and were clamped");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cardgeom::{bishop_frames, build_card};
    use crate::hairio::Strand;

    fn flat_card(sections: usize) -> CardGeometry {
        let mean = Strand::new(
            (0..sections)
                .map(|j| Vec3::new(j as f64, 0.0, 0.0))
                .collect(),
        );
        let f = bishop_frames(&mean, &Vec3::z()).unwrap();
        build_card(&mean, &f, &vec![0.5; sections], sections - 1, 1e-3).unwrap()
    }

    #[test]
    fn interior_point_and_offset() {
        let card = flat_card(3);
        let sp = closest_point_on_card(&Vec3::new(0.3, 0.1, 0.0), &card);
        assert_eq!(sp.z, 0.0);
        let foot = {
            let [a, b, c] = card.triangle(sp.triangle_index);
            let w = sp.weights();
            a * w[0] + b * w[1] + c * w[2]
        };
        assert!((foot - Vec3::new(0.3, 0.1, 0.0)).norm() < 1e-12);
        let n = face_normal(&card, sp.triangle_index);
        let lifted = closest_point_on_card(&(Vec3::new(0.3, 0.1, 0.0) + n * 0.25), &card);
        assert_eq!(lifted.triangle_index, sp.triangle_index);
        assert!((lifted.z - 0.25).abs() < 1e-12);
        let loc = CardLocator::new(&card);
        assert_eq!(loc.closest(&Vec3::new(0.3, 0.1, 0.4)), closest_point_on_card(&Vec3::new(0.3, 0.1, 0.4), &card));
    }

    #[test]
    fn chart_vertices_reconstruct_exactly() {
        let card = flat_card(4);
        for (v, uv) in card.vertices.iter().zip(&card.uv_layout) {
            let (p, loc) = reconstruct_point(&card, *uv, 0.0);
            assert!((p - v).norm() < 1e-12);
            assert!(!loc.clamped);
        }
        let (p, _) = reconstruct_point(&card, Vec2::new(0.5, 0.5), 1.0);
        let n = face_normal(&card, 0);
        assert!(((p - Vec3::new(1.5, 0.0, 0.0)) - n).norm() < 1e-12);
        let (_, loc) = reconstruct_point(&card, Vec2::new(1.5, 0.5), 0.0);
        assert!(loc.clamped);
    }

    #[test]
    fn locate_is_inverse_of_layout() {
        let card = flat_card(5);
        for t in 0..card.triangles.len() {
            let uv = card.triangle_uv(t);
            let centroid = (uv[0] + uv[1] + uv[2]) / 3.0;
            let loc = locate_uv(&card, centroid);
            assert_eq!(loc.triangle, t);
            for w in loc.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centerline_projects_to_middle() {
        let mean = Strand::new((0..6).map(|j| Vec3::new(0.0, -(j as f64), 0.0)).collect());
        let model = HairModel::new(vec![mean.clone()]).unwrap();
        let f = bishop_frames(&mean, &Vec3::z()).unwrap();
        let card = build_card(&mean, &f, &[0.0; 6], 5, 1e-3).unwrap();
        let cluster = StrandCluster {
            member_indices: vec![0],
            mean_strand: mean,
        };
        let tex = project_cluster(&cluster, &card, &model, 0.01).unwrap();
        for (uv, z) in tex.strands[0].uv.iter().zip(&tex.strands[0].z) {
            assert!((uv.x - 0.5).abs() < 1e-12);
            assert_eq!(*z, 0.0);
        }
        let empty = StrandCluster {
            member_indices: vec![],
            mean_strand: cluster.mean_strand.clone(),
        };
        assert!(matches!(
            project_cluster(&empty, &card, &model, 0.01),
            Err(TexError::EmptyCluster)
        ));
    }

    #[test]
    fn blob_roundtrip() {
        let tex = CardTexture {
            strands: vec![TexStrand {
                source: 7,
                uv: vec![Vec2::new(0.1, 0.2), Vec2::new(0.3, 0.4)],
                z: vec![0.5, -0.25],
                tangents: vec![Vec3::x(), Vec3::y()],
                width: 0.01,
            }],
        };
        let mut buf = Vec::new();
        tex.write_blob(&mut buf).unwrap();
        assert_eq!(CardTexture::read_blob(&buf[..]).unwrap(), tex);
        assert!(CardTexture::read_blob(&buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(matches!(CardTexture::read_blob(&buf[..]), Err(TexError::BadBlob(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mean = Strand::new(
            (0..5)
                .map(|j| {
                    let t = j as f64 * 0.4;
                    Vec3::new(t.sin(), -t, 0.3 * t * t)
                })
                .collect(),
        );
        let f = bishop_frames(&mean, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let card = build_card(&mean, &f, &[0.2, 0.3, 0.25, 0.2, 0.1], 4, 1e-3).unwrap();
        let uv = Vec2::new(0.3, 0.55);
        let z = 0.07;
        let probe = Vec3::new(0.3, -0.7, 1.1);
        let (_, loc) = reconstruct_point(&card, uv, z);
        let mut g_v = vec![Vec3::zeros(); card.vertices.len()];
        let g_uv = reconstruct_point_backward(&card, &loc, z, &probe, &mut g_v);
        let h = 1e-6;
        let eval = |c: &CardGeometry, uv: Vec2| reconstruct_point(c, uv, z).0.dot(&probe);
        for i in 0..card.vertices.len() {
            for a in 0..3 {
                let mut cp = card.clone();
                cp.vertices[i][a] += h;
                let mut cm = card.clone();
                cm.vertices[i][a] -= h;
                let fd = (eval(&cp, uv) - eval(&cm, uv)) / (2.0 * h);
                assert!((fd - g_v[i][a]).abs() < 1e-6, "vertex {i} axis {a}: {fd} vs {}", g_v[i][a]);
            }
        }
        for a in 0..2 {
            let mut up = uv;
            up[a] += h;
            let mut um = uv;
            um[a] -= h;
            let fd = (eval(&card, up) - eval(&card, um)) / (2.0 * h);
            assert!((fd - g_uv[a]).abs() < 1e-6);
        }
    }
}
