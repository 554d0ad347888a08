//! Card geometry: parallel-transport frames along a mean strand, the width
//! envelope of the cluster, the quad strip built from both, the discrete
//! root-normal search and crossed companion cards.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::StrandCluster;
use crate::hairio::{HairModel, Strand};
use crate::math::{any_perpendicular, minimal_rotation, triangle_area, Vec2, Vec3};

#[derive(Debug, Error)]
pub enum CardError {
    #[error("zero-length segment {0} in mean strand")]
    ZeroLengthSegment(usize),
    #[error("need at least one quad")]
    ZeroQuads,
    #[error("{quads} quads need {needed} cross-sections but the strand has {samples} samples")]
    TooManyQuads {
        quads: usize,
        needed: usize,
        samples: usize,
    },
    #[error("root normal is parallel to the first tangent")]
    DegenerateRootNormal,
    #[error("need at least two orientation candidates")]
    TooFewCandidates,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_CIRCLE_SAMPLES: usize = 36;

/// Orthonormal (tangent, normal, binormal) triads along a strand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameField {
    pub tangents: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub binormals: Vec<Vec3>,
}

impl FrameField {
    pub fn len(&self) -> usize {
        self.tangents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tangents.is_empty()
    }

    /// Frame rotated by +90 degrees about each tangent: n' = b, b' = -n.
    pub fn quarter_turn(&self) -> FrameField {
        FrameField {
            tangents: self.tangents.clone(),
            normals: self.binormals.clone(),
            binormals: self.normals.iter().map(|n| -n).collect(),
        }
    }
}

/// Forward-difference unit tangents; the last sample repeats the previous one.
pub fn segment_tangents(samples: &[Vec3]) -> Result<Vec<Vec3>, CardError> {
    let mut t = Vec::with_capacity(samples.len());
    for (j, w) in samples.windows(2).enumerate() {
        let d = w[1] - w[0];
        let len = d.norm();
        if !(len > 0.0) {
            return Err(CardError::ZeroLengthSegment(j));
        }
        t.push(d / len);
    }
    if let Some(&last) = t.last() {
        t.push(last);
    }
    Ok(t)
}

/// Bishop frames: the root normal is parallel-transported by the minimal
/// rotation between consecutive tangents.
pub fn bishop_frames(mean: &Strand, root_normal: &Vec3) -> Result<FrameField, CardError> {
    let tangents = segment_tangents(&mean.samples)?;
    let t0 = tangents[0];
    let n0 = (root_normal - t0 * t0.dot(root_normal))
        .try_normalize(1e-12)
        .ok_or(CardError::DegenerateRootNormal)?;
    let mut normals = Vec::with_capacity(tangents.len());
    normals.push(n0);
    for j in 1..tangents.len() {
        let prev = normals[j - 1];
        let moved = minimal_rotation(&prev, &tangents[j - 1], &tangents[j]);
        // Strip round-off drift out of the tangent direction.
        let t = tangents[j];
        normals.push((moved - t * t.dot(&moved)).normalize());
    }
    let binormals = tangents.iter().zip(&normals).map(|(t, n)| t.cross(n)).collect();
    Ok(FrameField {
        tangents,
        normals,
        binormals,
    })
}

/// Per-sample width envelope: largest |offset . binormal| of any member's
/// corresponding sample.
pub fn card_widths(cluster: &StrandCluster, model: &HairModel, frames: &FrameField) -> Vec<f64> {
    let mean = &cluster.mean_strand.samples;
    (0..frames.len())
        .map(|j| {
            cluster
                .member_indices
                .iter()
                .map(|&i| (model.strands[i].samples[j] - mean[j]).dot(&frames.binormals[j]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// A quad strip. Vertex `2k` is the minus rail and `2k + 1` the plus rail
/// of cross-section `k`; cross-sections run root to tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardGeometry {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Chart coordinates per vertex: u in {0, 1} across, v root to tip.
    pub uv_layout: Vec<Vec2>,
    /// Mean-strand sample index of each cross-section.
    pub section_samples: Vec<usize>,
}

impl CardGeometry {
    pub fn sections(&self) -> usize {
        self.vertices.len() / 2
    }

    pub fn quads(&self) -> usize {
        self.sections() - 1
    }

    pub fn plus(&self, k: usize) -> Vec3 {
        self.vertices[2 * k + 1]
    }

    pub fn minus(&self, k: usize) -> Vec3 {
        self.vertices[2 * k]
    }

    pub fn centerline(&self) -> Vec<Vec3> {
        (0..self.sections())
            .map(|k| (self.plus(k) + self.minus(k)) * 0.5)
            .collect()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_uv(&self, t: usize) -> [Vec2; 3] {
        self.triangles[t].map(|i| self.uv_layout[i])
    }

    /// Mean rail separation, used to convert world widths to texels.
    pub fn mean_width(&self) -> f64 {
        let n = self.sections();
        (0..n).map(|k| (self.plus(k) - self.minus(k)).norm()).sum::<f64>() / n as f64
    }

    pub fn length(&self) -> f64 {
        self.centerline().windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn min_triangle_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                triangle_area(&a, &b, &c)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Cross-section sample indices: `ceil(k (n - 1) / quads)` for k = 0..=quads.
pub fn section_indices(samples: usize, quads: usize) -> Result<Vec<usize>, CardError> {
    if quads == 0 {
        return Err(CardError::ZeroQuads);
    }
    if quads + 1 > samples {
        return Err(CardError::TooManyQuads {
            quads,
            needed: quads + 1,
            samples,
        });
    }
    Ok((0..=quads)
        .map(|k| (k * (samples - 1)).div_ceil(quads))
        .collect())
}

/// Zig-zag triangulation of a strip with `sections` cross-sections.
pub fn strip_triangles(sections: usize) -> Vec<[usize; 3]> {
    (0..sections.saturating_sub(1))
        .flat_map(|k| {
            let (a, b, c, d) = (2 * k, 2 * k + 1, 2 * k + 2, 2 * k + 3);
            [[a, b, c], [b, d, c]]
        })
        .collect()
}

pub fn build_card(
    mean: &Strand,
    frames: &FrameField,
    widths: &[f64],
    n_quads: usize,
    min_width: f64,
) -> Result<CardGeometry, CardError> {
    let sections = section_indices(mean.len(), n_quads)?;
    let mut vertices = Vec::with_capacity(2 * sections.len());
    for &j in &sections {
        let half = widths[j].max(min_width);
        let s = mean.samples[j];
        let b = frames.binormals[j];
        vertices.push(s - b * half);
        vertices.push(s + b * half);
    }
    // v follows centerline arc length.
    let mut arc = vec![0.0];
    for w in sections.windows(2) {
        let d = (mean.samples[w[1]] - mean.samples[w[0]]).norm();
        arc.push(arc.last().unwrap() + d);
    }
    let total = *arc.last().unwrap();
    if !(total > 0.0) {
        return Err(CardError::ZeroLengthSegment(0));
    }
    let mut uv_layout = Vec::with_capacity(vertices.len());
    for (k, a) in arc.iter().enumerate() {
        let v = if k + 1 == arc.len() { 1.0 } else { a / total };
        uv_layout.push(Vec2::new(0.0, v));
        uv_layout.push(Vec2::new(1.0, v));
    }
    Ok(CardGeometry {
        vertices,
        triangles: strip_triangles(sections.len()),
        uv_layout,
        section_samples: sections,
    })
}

/// Closest-point distance from `p` to a card surface (brute force).
pub fn distance_to_card(p: &Vec3, card: &CardGeometry) -> f64 {
    let mut best = f64::INFINITY;
    for t in 0..card.triangles.len() {
        let [a, b, c] = card.triangle(t);
        let q = crate::math::closest_point_on_triangle(p, &a, &b, &c);
        best = best.min((q.point - p).norm_squared());
    }
    best.sqrt()
}

/// Sum over member samples of the distance to their projection on `card`.
pub fn projection_error(cluster: &StrandCluster, model: &HairModel, card: &CardGeometry) -> f64 {
    let locator = crate::texspace::CardLocator::new(card);
    cluster
        .member_indices
        .iter()
        .flat_map(|&i| model.strands[i].samples.iter())
        .map(|p| locator.distance(p))
        .sum()
}

/// Result of [`orientation_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct Orientation {
    pub root_normal: Vec3,
    pub projection_error: f64,
    pub candidate_index: usize,
    /// Projection error of every evaluated candidate.
    pub candidate_errors: Vec<f64>,
}

/// Candidate `i` of `count` equally spaced unit normals orthogonal to `tangent`.
pub fn circle_candidate(tangent: &Vec3, i: usize, count: usize) -> Vec3 {
    let e1 = any_perpendicular(tangent);
    let e2 = tangent.cross(&e1);
    let angle = TAU * i as f64 / count as f64;
    e1 * angle.cos() + e2 * angle.sin()
}

/// Evaluates equally spaced root normals and keeps the one whose
/// full-resolution strip gives the smallest projection error.
pub fn orientation_search(
    cluster: &StrandCluster,
    model: &HairModel,
    n_circle_samples: usize,
    min_width: f64,
) -> Result<Orientation, CardError> {
    if n_circle_samples < 2 {
        return Err(CardError::TooFewCandidates);
    }
    let mean = &cluster.mean_strand;
    let t0 = segment_tangents(&mean.samples)?[0];
    let full = mean.len() - 1;
    let candidate_errors = (0..n_circle_samples)
        .into_par_iter()
        .map(|i| {
            let normal = circle_candidate(&t0, i, n_circle_samples);
            let frames = bishop_frames(mean, &normal)?;
            let widths = card_widths(cluster, model, &frames);
            let card = build_card(mean, &frames, &widths, full, min_width)?;
            Ok(projection_error(cluster, model, &card))
        })
        .collect::<Result<Vec<f64>, CardError>>()?;
    let mut best = 0;
    for (i, &e) in candidate_errors.iter().enumerate() {
        if e < candidate_errors[best] {
            best = i;
        }
    }
    Ok(Orientation {
        root_normal: circle_candidate(&t0, best, n_circle_samples),
        projection_error: candidate_errors[best],
        candidate_index: best,
        candidate_errors,
    })
}

/// Companion card at 90 degrees about the tangent, sharing cross-sections.
pub fn cross_card(
    card: &CardGeometry,
    mean: &Strand,
    frames: &FrameField,
    widths: &[f64],
    min_width: f64,
) -> Result<CardGeometry, CardError> {
    build_card(mean, &frames.quarter_turn(), widths, card.quads(), min_width)
}

/// Everything fitted for one card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCard {
    pub cluster: usize,
    pub crossed: bool,
    pub geometry: CardGeometry,
    pub frames: FrameField,
    pub widths: Vec<f64>,
    pub projection_error: f64,
}

/// Orientation search followed by the downsampled strip (and its crossed
/// companion when requested).
pub fn fit_cluster(
    cluster_index: usize,
    cluster: &StrandCluster,
    model: &HairModel,
    n_quads: usize,
    n_circle_samples: usize,
    min_width: f64,
    crossed: bool,
) -> Result<Vec<FittedCard>, CardError> {
    let orientation = orientation_search(cluster, model, n_circle_samples, min_width)?;
    let frames = bishop_frames(&cluster.mean_strand, &orientation.root_normal)?;
    let widths = card_widths(cluster, model, &frames);
    let geometry = build_card(&cluster.mean_strand, &frames, &widths, n_quads, min_width)?;
    let mut out = Vec::with_capacity(2);
    if crossed {
        let rotated = frames.quarter_turn();
        let crossed_geometry = cross_card(&geometry, &cluster.mean_strand, &frames, &widths, min_width)?;
        out.push(FittedCard {
            cluster: cluster_index,
            crossed: false,
            geometry,
            frames,
            widths: widths.clone(),
            projection_error: orientation.projection_error,
        });
        out.push(FittedCard {
            cluster: cluster_index,
            crossed: true,
            geometry: crossed_geometry,
            frames: rotated,
            widths,
            projection_error: f64::NAN,
        });
    } else {
        out.push(FittedCard {
            cluster: cluster_index,
            crossed: false,
            geometry,
            frames,
            widths,
            projection_error: orientation.projection_error,
        });
    }
    Ok(out)
}

/// Debug OBJ of card strips (positions and faces only).
pub fn write_cards_obj(path: &Path, cards: &[CardGeometry]) -> Result<(), CardError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut base = 1;
    for (i, card) in cards.iter().enumerate() {
        writeln!(out, "o card_{i}")?;
        for v in &card.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &card.triangles {
            writeln!(out, "f {} {} {}", t[0] + base, t[1] + base, t[2] + base)?;
        }
        base += card.vertices.len();
    }
    out.flush()?;
    Ok(())
}
