//! Strand models and head meshes: in-memory types, resampling and file I/O.
//!
//! Two strand formats are read:
//!
//! * the binary `HAIR` layout used by many public strand datasets (128-byte
//!   header, optional per-strand segment counts, point array; thickness,
//!   transparency and color arrays are skipped), and
//! * a line-oriented text format: a header `HAIRTXT <strands> <samples>`
//!   followed by one `x y z` line per sample, strands concatenated.
//!
//! Head meshes are read from ASCII OBJ (`v`, `vt`, `vn`, triangular `f`).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{triangle_area, triangle_cross, Vec2, Vec3};

#[derive(Debug, Error)]
pub enum HairIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: {0}")]
    Truncated(String),
    #[error("malformed data at line {line}: {reason}")]
    MalformedData { line: usize, reason: String },
    #[error("empty model")]
    EmptyModel,
    #[error("degenerate strand: {0}")]
    DegenerateStrand(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-triangle face at line {0}")]
    NonTriangleFace(usize),
    #[error("index out of range at line {line}: {index}")]
    IndexOutOfRange { line: usize, index: i64 },
    #[error("degenerate triangle {0} (zero area)")]
    DegenerateTriangle(usize),
}

pub type Result<T> = std::result::Result<T, HairIoError>;

/// A hair strand sampled at uniform arc-length spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strand {
    pub samples: Vec<Vec3>,
}

impl Strand {
    pub fn new(samples: Vec<Vec3>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn root(&self) -> Vec3 {
        self.samples[0]
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl BoundingSphere {
    /// Sphere around the box center that encloses every point.
    pub fn enclosing<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Self {
        let bbox = crate::math::Aabb::from_points(points.clone());
        let center = bbox.center();
        let radius = points.map(|p| (p - center).norm()).fold(0.0, f64::max);
        Self { center, radius }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm() <= self.radius * (1.0 + 1e-12) + 1e-12
    }
}

/// A strand model: strands sharing one sample count, plus their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HairModel {
    pub strands: Vec<Strand>,
    pub bounds: BoundingSphere,
}

impl HairModel {
    pub fn new(strands: Vec<Strand>) -> Result<Self> {
        if strands.is_empty() {
            return Err(HairIoError::EmptyModel);
        }
        let n = strands[0].len();
        if n < 2 {
            return Err(HairIoError::DegenerateStrand(format!("{n} samples per strand")));
        }
        if let Some(i) = strands.iter().position(|s| s.len() != n) {
            return Err(HairIoError::InvalidArgument(format!(
                "strand {i} has {} samples, expected {n}",
                strands[i].len()
            )));
        }
        let bounds = BoundingSphere::enclosing(strands.iter().flat_map(|s| s.samples.iter()));
        Ok(Self { strands, bounds })
    }

    pub fn samples_per_strand(&self) -> usize {
        self.strands[0].len()
    }

    pub fn len(&self) -> usize {
        self.strands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strands.is_empty()
    }
}

pub fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Resamples a polyline to `n` points at equal arc-length spacing by linear
/// interpolation. Both endpoints are copied exactly.
pub fn resample_strand(points: &[Vec3], n: usize) -> Result<Strand> {
    if n < 2 {
        return Err(HairIoError::InvalidArgument(format!("sample count {n} < 2")));
    }
    if points.len() < 2 {
        return Err(HairIoError::DegenerateStrand(format!(
            "polyline has {} points",
            points.len()
        )));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    cumulative.push(0.0);
    for w in points.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (w[1] - w[0]).norm());
    }
    let total = *cumulative.last().unwrap();
    if !(total > 0.0) {
        return Err(HairIoError::DegenerateStrand("zero-length polyline".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((target - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * t);
    }
    out.push(*points.last().unwrap());
    Ok(Strand::new(out))
}

/// Raw polylines as stored on disk, before resampling.
pub fn read_polylines(path: &Path) -> Result<Vec<Vec<Vec3>>> {
    let bytes = fs::read(path)?;
    parse_polylines(&bytes)
}

pub fn parse_polylines(bytes: &[u8]) -> Result<Vec<Vec<Vec3>>> {
    if bytes.starts_with(b"HAIRTXT") {
        parse_text(bytes)
    } else if bytes.starts_with(b"HAIR") {
        parse_binary(bytes)
    } else {
        Err(HairIoError::MalformedHeader(
            "expected `HAIR` magic or `HAIRTXT` header".into(),
        ))
    }
}

/// Loads a strand file and resamples every strand to `samples_per_strand`.
pub fn load_hair(path: &Path, samples_per_strand: usize) -> Result<HairModel> {
    let polylines = read_polylines(path)?;
    model_from_polylines(&polylines, samples_per_strand)
}

pub fn model_from_polylines(polylines: &[Vec<Vec3>], samples_per_strand: usize) -> Result<HairModel> {
    if polylines.is_empty() {
        return Err(HairIoError::EmptyModel);
    }
    let strands = polylines
        .iter()
        .map(|p| resample_strand(p, samples_per_strand))
        .collect::<Result<Vec<_>>>()?;
    HairModel::new(strands)
}

fn parse_text(bytes: &[u8]) -> Result<Vec<Vec<Vec3>>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| HairIoError::MalformedHeader(format!("not utf-8: {e}")))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| HairIoError::MalformedHeader("missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "HAIRTXT" {
        return Err(HairIoError::MalformedHeader(format!("bad header `{header}`")));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| HairIoError::MalformedHeader(format!("bad count `{s}`")))
    };
    let strand_count = parse_count(fields[1])?;
    let samples = parse_count(fields[2])?;
    if strand_count == 0 {
        return Err(HairIoError::EmptyModel);
    }
    if samples < 2 {
        return Err(HairIoError::MalformedHeader(format!(
            "{samples} samples per strand"
        )));
    }
    let mut strands = Vec::with_capacity(strand_count);
    for s in 0..strand_count {
        let mut pts = Vec::with_capacity(samples);
        for _ in 0..samples {
            let (lineno, line) = lines.next().ok_or_else(|| {
                HairIoError::Truncated(format!("strand {s}: expected {samples} samples"))
            })?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| HairIoError::MalformedData {
                    line: lineno + 1,
                    reason: format!("{e}"),
                })?;
            if v.len() != 3 {
                return Err(HairIoError::MalformedData {
                    line: lineno + 1,
                    reason: format!("expected 3 coordinates, found {}", v.len()),
                });
            }
            pts.push(Vec3::new(v[0], v[1], v[2]));
        }
        strands.push(pts);
    }
    Ok(strands)
}

const HAIR_HEADER_LEN: usize = 128;
const HAS_SEGMENTS: u32 = 1;
const HAS_POINTS: u32 = 1 << 1;

fn parse_binary(bytes: &[u8]) -> Result<Vec<Vec<Vec3>>> {
    if bytes.len() < HAIR_HEADER_LEN {
        return Err(HairIoError::MalformedHeader(format!(
            "header needs {HAIR_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut header = &bytes[4..HAIR_HEADER_LEN];
    let hair_count = header.read_u32::<LittleEndian>()? as usize;
    let point_count = header.read_u32::<LittleEndian>()? as usize;
    let arrays = header.read_u32::<LittleEndian>()?;
    let default_segments = header.read_u32::<LittleEndian>()? as usize;
    if hair_count == 0 {
        return Err(HairIoError::EmptyModel);
    }
    if arrays & HAS_POINTS == 0 {
        return Err(HairIoError::MalformedHeader("file carries no point array".into()));
    }
    let mut body = &bytes[HAIR_HEADER_LEN..];
    let segments: Vec<usize> = if arrays & HAS_SEGMENTS != 0 {
        let mut seg = Vec::with_capacity(hair_count);
        for _ in 0..hair_count {
            seg.push(
                body.read_u16::<LittleEndian>()
                    .map_err(|_| HairIoError::Truncated("segment array".into()))?
                    as usize,
            );
        }
        seg
    } else {
        vec![default_segments; hair_count]
    };
    let expected: usize = segments.iter().map(|s| s + 1).sum();
    if expected != point_count {
        return Err(HairIoError::MalformedHeader(format!(
            "segment counts imply {expected} points, header says {point_count}"
        )));
    }
    let mut strands = Vec::with_capacity(hair_count);
    for (h, &seg) in segments.iter().enumerate() {
        let mut pts = Vec::with_capacity(seg + 1);
        for _ in 0..=seg {
            let mut xyz = [0.0f32; 3];
            body.read_f32_into::<LittleEndian>(&mut xyz)
                .map_err(|_| HairIoError::Truncated(format!("point array in strand {h}")))?;
            pts.push(Vec3::new(xyz[0] as f64, xyz[1] as f64, xyz[2] as f64));
        }
        strands.push(pts);
    }
    Ok(strands)
}

/// Writes the binary `HAIR` layout (segments + points only).
pub fn write_hair_binary(path: &Path, polylines: &[Vec<Vec3>]) -> Result<()> {
    use byteorder::WriteBytesExt;
    let mut out = Vec::new();
    out.extend_from_slice(b"HAIR");
    let points: usize = polylines.iter().map(Vec::len).sum();
    out.write_u32::<LittleEndian>(polylines.len() as u32)?;
    out.write_u32::<LittleEndian>(points as u32)?;
    out.write_u32::<LittleEndian>(HAS_SEGMENTS | HAS_POINTS)?;
    out.write_u32::<LittleEndian>(0)?;
    out.resize(HAIR_HEADER_LEN, 0);
    for p in polylines {
        if p.len() < 2 || p.len() > u16::MAX as usize + 1 {
            return Err(HairIoError::InvalidArgument(format!(
                "strand with {} points cannot be stored",
                p.len()
            )));
        }
        out.write_u16::<LittleEndian>((p.len() - 1) as u16)?;
    }
    for p in polylines.iter().flatten() {
        for k in 0..3 {
            out.write_f32::<LittleEndian>(p[k] as f32)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the text format. Values use shortest round-trip formatting.
pub fn write_hair_text(path: &Path, model: &HairModel) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "HAIRTXT {} {}", model.len(), model.samples_per_strand())?;
    for s in &model.strands {
        for p in &s.samples {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Seeded uniform subsample without replacement; original order is kept.
pub fn downsample_strands(model: &HairModel, count: usize, seed: u64) -> Result<HairModel> {
    if count == 0 {
        return Err(HairIoError::InvalidArgument("downsample count is 0".into()));
    }
    if count > model.len() {
        return Err(HairIoError::InvalidArgument(format!(
            "cannot keep {count} of {} strands",
            model.len()
        )));
    }
    if count == model.len() {
        return Ok(model.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, model.len(), count).into_vec();
    keep.sort_unstable();
    HairModel::new(keep.into_iter().map(|i| model.strands[i].clone()).collect())
}

/// Triangle head mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vec3>,
    /// Per-corner texture coordinates, when the OBJ carries `vt` for every face.
    pub corner_uvs: Option<Vec<[Vec2; 3]>>,
}

impl HeadMesh {
    /// Validates indices and areas; computes area-weighted normals.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let normals = vec![Vec3::zeros(); vertices.len()];
        let mut mesh = Self {
            vertices,
            triangles,
            vertex_normals: normals,
            corner_uvs: None,
        };
        mesh.validate()?;
        mesh.vertex_normals = area_weighted_normals(&mesh.vertices, &mesh.triangles);
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i >= self.vertices.len()) {
                return Err(HairIoError::IndexOutOfRange {
                    line: 0,
                    index: i as i64,
                });
            }
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            if !(triangle_area(&a, &b, &c) > 0.0) {
                return Err(HairIoError::DegenerateTriangle(t));
            }
        }
        Ok(())
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        triangle_cross(&a, &b, &c).normalize()
    }

    pub fn corner(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }
}

pub fn area_weighted_normals(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for tri in triangles {
        // |cross| = 2 * area, so the raw cross product is already area weighted.
        let n = triangle_cross(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
        for &i in tri {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::z))
        .collect()
}

pub fn load_head_mesh(path: &Path) -> Result<HeadMesh> {
    let file = fs::File::open(path)?;
    parse_obj(BufReader::new(file))
}

pub fn parse_obj<R: Read>(reader: BufReader<R>) -> Result<HeadMesh> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut texcoords = Vec::new();
    let mut triangles = Vec::new();
    let mut face_normals: Vec<Option<[usize; 3]>> = Vec::new();
    let mut face_uvs: Vec<Option<[usize; 3]>> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let floats = |it: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            it.map(|s| {
                s.parse::<f64>().map_err(|e| HairIoError::MalformedData {
                    line: lineno,
                    reason: format!("{e}"),
                })
            })
            .collect()
        };
        match tag {
            "v" => {
                let v = floats(it)?;
                if v.len() < 3 {
                    return Err(HairIoError::MalformedData {
                        line: lineno,
                        reason: "vertex needs 3 coordinates".into(),
                    });
                }
                vertices.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vn" => {
                let v = floats(it)?;
                if v.len() < 3 {
                    return Err(HairIoError::MalformedData {
                        line: lineno,
                        reason: "normal needs 3 coordinates".into(),
                    });
                }
                normals.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = floats(it)?;
                if v.len() < 2 {
                    return Err(HairIoError::MalformedData {
                        line: lineno,
                        reason: "texture coordinate needs 2 components".into(),
                    });
                }
                texcoords.push(Vec2::new(v[0], v[1]));
            }
            "f" => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 3 {
                    return Err(HairIoError::NonTriangleFace(lineno));
                }
                let mut v = [0usize; 3];
                let mut vt = [0usize; 3];
                let mut vn = [0usize; 3];
                let mut has_vt = true;
                let mut has_vn = true;
                for (k, c) in corners.iter().enumerate() {
                    let parts: Vec<&str> = c.split('/').collect();
                    let index = |s: &str, len: usize| -> Result<usize> {
                        let i: i64 = s.parse().map_err(|_| HairIoError::MalformedData {
                            line: lineno,
                            reason: format!("bad index `{s}`"),
                        })?;
                        // OBJ indices are 1-based; negatives count from the end.
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            len as i64 + i
                        } else {
                            -1
                        };
                        if resolved < 0 || resolved >= len as i64 {
                            return Err(HairIoError::IndexOutOfRange { line: lineno, index: i });
                        }
                        Ok(resolved as usize)
                    };
                    v[k] = index(parts[0], vertices.len())?;
                    match parts.get(1) {
                        Some(s) if !s.is_empty() => vt[k] = index(s, texcoords.len())?,
                        _ => has_vt = false,
                    }
                    match parts.get(2) {
                        Some(s) if !s.is_empty() => vn[k] = index(s, normals.len())?,
                        _ => has_vn = false,
                    }
                }
                triangles.push(v);
                face_uvs.push(has_vt.then_some(vt));
                face_normals.push(has_vn.then_some(vn));
            }
            _ => {}
        }
    }

    let mut mesh = HeadMesh::new(vertices, triangles)?;
    // Use file normals only when every face references them.
    if !face_normals.is_empty() && face_normals.iter().all(Option::is_some) {
        let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
        for (tri, fnorm) in mesh.triangles.iter().zip(&face_normals) {
            for k in 0..3 {
                acc[tri[k]] = normals[fnorm.unwrap()[k]];
            }
        }
        for (n, a) in mesh.vertex_normals.iter_mut().zip(acc) {
            if let Some(a) = a.try_normalize(0.0) {
                *n = a;
            }
        }
    }
    if !face_uvs.is_empty() && face_uvs.iter().all(Option::is_some) {
        mesh.corner_uvs = Some(
            face_uvs
                .iter()
                .map(|f| f.unwrap().map(|i| texcoords[i]))
                .collect(),
        );
    }
    Ok(mesh)
}

/// Writes a head mesh as OBJ with per-vertex normals.
pub fn write_head_mesh(path: &Path, mesh: &HeadMesh) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for n in &mesh.vertex_normals {
        writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
    }
    if let Some(uvs) = &mesh.corner_uvs {
        for c in uvs.iter().flatten() {
            writeln!(out, "vt {} {}", c.x, c.y)?;
        }
        for (t, tri) in mesh.triangles.iter().enumerate() {
            writeln!(
                out,
                "f {}/{}/{} {}/{}/{} {}/{}/{}",
                tri[0] + 1,
                3 * t + 1,
                tri[0] + 1,
                tri[1] + 1,
                3 * t + 2,
                tri[1] + 1,
                tri[2] + 1,
                3 * t + 3,
                tri[2] + 1
            )?;
        }
    } else {
        for tri in &mesh.triangles {
            writeln!(
                out,
                "f {}//{} {}//{} {}//{}",
                tri[0] + 1,
                tri[0] + 1,
                tri[1] + 1,
                tri[1] + 1,
                tri[2] + 1,
                tri[2] + 1
            )?;
        }
    }
    out.flush()?;
    Ok(())
}
