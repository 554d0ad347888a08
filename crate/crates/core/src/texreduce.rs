//! Texture sharing: rasterize card textures, measure how alike they look,
//! and merge them into fewer groups with k-medoids. The medoid of each group
//! is the texture that is kept.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec2;
use crate::stroke::Canvas;
use crate::texspace::CardTexture;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("target group count must be positive")]
    ZeroTarget,
    #[error("{target} groups requested for {textures} textures")]
    TooManyGroups { target: usize, textures: usize },
    #[error("image size mismatch: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("distance matrix has no entry ({0}, {1})")]
    MissingEntry(usize, usize),
    #[error("malformed distance matrix: {0}")]
    BadMatrix(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major RGB image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    fn luminance(&self, x: usize, y: usize) -> f64 {
        let p = self.at(x, y);
        0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
    }

    /// 2x box downsample (odd trailing rows/columns dropped).
    pub fn half(&self) -> RgbImage {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                let mut n = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (sx, sy) = (2 * x + dx, 2 * y + dy);
                    if sx < self.width && sy < self.height {
                        let p = self.at(sx, sy);
                        for k in 0..3 {
                            acc[k] += p[k];
                        }
                        n += 1.0;
                    }
                }
                data.push(acc.map(|v| v / n));
            }
        }
        RgbImage { width: w, height: h, data }
    }
}

/// Texel position of a chart point: v runs along the width, u along the height.
pub fn chart_to_texel(uv: Vec2, width: usize, height: usize) -> Vec2 {
    Vec2::new(uv.y * width as f64, uv.x * height as f64)
}

/// Rasterizes uv strands as anti-aliased strokes colored by their uv-space
/// direction. `card_width` is the world width spanned by u in [0, 1].
pub fn raster_card_texture(texture: &CardTexture, width: usize, height: usize, card_width: f64) -> RgbImage {
    let mut canvas = Canvas::new(width, height);
    let polylines: Vec<Vec<Vec2>> = texture
        .strands
        .iter()
        .map(|s| s.uv.iter().map(|uv| chart_to_texel(*uv, width, height)).collect())
        .collect();
    for (i, (s, pts)) in texture.strands.iter().zip(&polylines).enumerate() {
        let half = 0.5 * s.width / card_width.max(1e-12) * height as f64;
        canvas.draw_polyline(i, pts, half);
    }
    let mut img = RgbImage::filled(width, height, [0.0; 3]);
    for (px, hit) in img.data.iter_mut().zip(&canvas.hits) {
        let Some(h) = hit else { continue };
        let pts = &polylines[h.strand];
        let d = if pts.len() >= 2 { pts[h.segment + 1] - pts[h.segment] } else { Vec2::zeros() };
        let d = d.try_normalize(1e-12).unwrap_or_else(Vec2::zeros);
        let c = h.coverage;
        *px = [c * (d.x + 1.0) * 0.5, c * (d.y + 1.0) * 0.5, c];
    }
    img
}

/// Pluggable image distance.
pub trait PerceptualMetric: Sync {
    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64, ReduceError>;
}

/// Multi-scale patch statistics: per-patch channel means and
/// magnitude-weighted gradient-orientation histograms over an image
/// pyramid, compared with an L2 norm.
#[derive(Debug, Clone)]
pub struct PatchStatsMetric {
    pub levels: usize,
    pub patch: usize,
    pub bins: usize,
}

impl Default for PatchStatsMetric {
    fn default() -> Self {
        Self {
            levels: 3,
            patch: 8,
            bins: 8,
        }
    }
}

impl PatchStatsMetric {
    pub fn descriptor(&self, img: &RgbImage) -> Vec<f64> {
        let mut out = Vec::new();
        let mut level = img.clone();
        for l in 0..self.levels {
            if l > 0 {
                level = level.half();
            }
            let p = self.patch;
            let px = level.width.div_ceil(p);
            let py = level.height.div_ceil(p);
            for by in 0..py {
                for bx in 0..px {
                    let mut mean = [0.0; 3];
                    let mut hist = vec![0.0; self.bins];
                    let mut count = 0.0;
                    for y in by * p..((by + 1) * p).min(level.height) {
                        for x in bx * p..((bx + 1) * p).min(level.width) {
                            let v = level.at(x, y);
                            for k in 0..3 {
                                mean[k] += v[k];
                            }
                            count += 1.0;
                            let gx = level.luminance((x + 1).min(level.width - 1), y)
                                - level.luminance(x.saturating_sub(1), y);
                            let gy = level.luminance(x, (y + 1).min(level.height - 1))
                                - level.luminance(x, y.saturating_sub(1));
                            let mag = (gx * gx + gy * gy).sqrt();
                            if mag > 0.0 {
                                // Unsigned orientation in [0, pi).
                                let ang = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                                let b = ((ang / std::f64::consts::PI) * self.bins as f64) as usize;
                                hist[b.min(self.bins - 1)] += mag;
                            }
                        }
                    }
                    out.extend(mean.iter().map(|m| m / count));
                    out.extend(hist.iter().map(|h| h / count));
                }
            }
        }
        out
    }
}

impl PerceptualMetric for PatchStatsMetric {
    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64, ReduceError> {
        if (a.width, a.height) != (b.width, b.height) {
            return Err(ReduceError::SizeMismatch((a.width, a.height), (b.width, b.height)));
        }
        let da = self.descriptor(a);
        let db = self.descriptor(b);
        Ok(da.iter().zip(&db).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
    }
}

/// Symmetric pairwise distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn from_images(images: &[RgbImage], metric: &dyn PerceptualMetric) -> Result<Self, ReduceError> {
        let n = images.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let d: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| metric.distance(&images[i], &images[j]))
            .collect::<Result<_, _>>()?;
        let mut values = vec![0.0; n * n];
        for (&(i, j), v) in pairs.iter().zip(d) {
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        Ok(Self { n, values })
    }

    /// Text format: header `DMAT n`, then `n * n` row-major floats.
    pub fn load(path: &Path) -> Result<Self, ReduceError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut tokens: Vec<String> = Vec::new();
        for line in reader.lines() {
            tokens.extend(line?.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        if it.next().as_deref() != Some("DMAT") {
            return Err(ReduceError::BadMatrix("missing DMAT header".into()));
        }
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| ReduceError::BadMatrix("bad size".into()))?;
        let mut values = Vec::with_capacity(n * n);
        for k in 0..n * n {
            let tok = it.next().ok_or(ReduceError::MissingEntry(k / n.max(1), k % n.max(1)))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| ReduceError::BadMatrix(format!("bad value {tok:?}")))?;
            values.push(v);
        }
        Ok(Self { n, values })
    }

    pub fn save(&self, path: &Path) -> Result<(), ReduceError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "DMAT {}", self.n)?;
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{}", self.get(i, j))).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of [`reduce_textures`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureAssignment {
    /// Group of every input texture.
    pub group_of: Vec<usize>,
    /// Retained input texture of every group; groups are ordered by it.
    pub representative: Vec<usize>,
    /// Sum of member-to-medoid distances after each improvement.
    pub objective_history: Vec<f64>,
}

impl TextureAssignment {
    pub fn identity(n: usize) -> Self {
        Self {
            group_of: (0..n).collect(),
            representative: (0..n).collect(),
            objective_history: vec![0.0],
        }
    }

    pub fn objective(&self, d: &DistanceMatrix) -> f64 {
        self.group_of
            .iter()
            .enumerate()
            .map(|(i, &g)| d.get(i, self.representative[g]))
            .sum()
    }
}

fn assign(d: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..d.n)
        .map(|i| {
            if let Some(g) = medoids.iter().position(|&m| m == i) {
                return g;
            }
            let mut best = 0;
            for g in 1..medoids.len() {
                if d.get(i, medoids[g]) < d.get(i, medoids[best]) {
                    best = g;
                }
            }
            best
        })
        .collect()
}

fn cost(d: &DistanceMatrix, medoids: &[usize], group_of: &[usize]) -> f64 {
    group_of.iter().enumerate().map(|(i, &g)| d.get(i, medoids[g])).sum()
}

/// Medoid sets up to this count are searched exhaustively after the swaps.
pub const EXACT_LIMIT: usize = 20_000;

fn combinations(n: usize, k: usize) -> usize {
    let mut c: usize = 1;
    for i in 0..k.min(n - k) {
        c = c.saturating_mul(n - i) / (i + 1);
        if c > EXACT_LIMIT {
            return usize::MAX;
        }
    }
    c
}

/// Advances a sorted index set to the next k-subset of `0..n`.
fn next_combination(set: &mut [usize], n: usize) -> bool {
    let k = set.len();
    for i in (0..k).rev() {
        if set[i] < n - k + i {
            set[i] += 1;
            for j in i + 1..k {
                set[j] = set[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// k-medoids: seeded k-means++ start, alternating assignment and medoid
/// updates, then best-improvement swaps until no swap helps; small
/// instances finish with an exhaustive check over medoid sets.
pub fn reduce_with_matrix(d: &DistanceMatrix, n_target: usize, seed: u64) -> Result<TextureAssignment, ReduceError> {
    let n = d.n;
    if n_target == 0 {
        return Err(ReduceError::ZeroTarget);
    }
    if n_target > n {
        return Err(ReduceError::TooManyGroups {
            target: n_target,
            textures: n,
        });
    }
    if n_target == n {
        return Ok(TextureAssignment::identity(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = vec![rng.gen_range(0..n)];
    while medoids.len() < n_target {
        let w: Vec<f64> = (0..n)
            .map(|i| {
                if medoids.contains(&i) {
                    0.0
                } else {
                    medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min).powi(2)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &wi) in w.iter().enumerate() {
                if wi > 0.0 {
                    pick = Some(i);
                    target -= wi;
                    if target <= 0.0 {
                        break;
                    }
                }
            }
            pick.expect("positive total")
        } else {
            (0..n).find(|i| !medoids.contains(i)).expect("n_target < n")
        };
        medoids.push(pick);
    }

    let mut group_of = assign(d, &medoids);
    let mut history = vec![cost(d, &medoids, &group_of)];
    loop {
        // Alternate until the medoid set is stable.
        loop {
            let mut changed = false;
            for g in 0..n_target {
                let members: Vec<usize> = (0..n).filter(|&i| group_of[i] == g).collect();
                let mut best = medoids[g];
                let mut best_sum: f64 = members.iter().map(|&j| d.get(best, j)).sum();
                for &c in &members {
                    let s: f64 = members.iter().map(|&j| d.get(c, j)).sum();
                    if s < best_sum || (s == best_sum && c < best) {
                        best = c;
                        best_sum = s;
                    }
                }
                if best != medoids[g] {
                    medoids[g] = best;
                    changed = true;
                }
            }
            let next = assign(d, &medoids);
            let c = cost(d, &medoids, &next);
            let improved = c < *history.last().unwrap();
            group_of = next;
            if improved {
                history.push(c);
            }
            if !changed {
                break;
            }
        }
        // Best single swap of a medoid with a non-medoid.
        let current = *history.last().unwrap();
        let mut best_swap: Option<(usize, usize, f64)> = None;
        for g in 0..n_target {
            for o in 0..n {
                if medoids.contains(&o) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[g] = o;
                let c = cost(d, &trial, &assign(d, &trial));
                if c < current - 1e-12 * current.abs().max(1e-300) && best_swap.map_or(true, |b| c < b.2) {
                    best_swap = Some((g, o, c));
                }
            }
        }
        match best_swap {
            Some((g, o, c)) => {
                medoids[g] = o;
                group_of = assign(d, &medoids);
                history.push(c);
            }
            None => break,
        }
    }

    // Swaps can stall in a local optimum; small instances are settled exactly.
    if combinations(n, n_target) <= EXACT_LIMIT {
        let current = *history.last().unwrap();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut set: Vec<usize> = (0..n_target).collect();
        loop {
            let c = cost(d, &set, &assign(d, &set));
            if c < current - 1e-12 * current.abs().max(1e-300) && best.as_ref().map_or(true, |b| c < b.1) {
                best = Some((set.clone(), c));
            }
            if !next_combination(&mut set, n) {
                break;
            }
        }
        if let Some((set, c)) = best {
            medoids = set;
            group_of = assign(d, &medoids);
            history.push(c);
        }
    }

    // Renumber groups by representative index.
    let mut order: Vec<usize> = (0..n_target).collect();
    order.sort_by_key(|&g| medoids[g]);
    let mut rename = vec![0; n_target];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    Ok(TextureAssignment {
        group_of: group_of.iter().map(|&g| rename[g]).collect(),
        representative: order.iter().map(|&g| medoids[g]).collect(),
        objective_history: history,
    })
}

/// Rasterizes nothing itself: distances come from `images` under `metric`.
pub fn reduce_textures(
    images: &[RgbImage],
    metric: &dyn PerceptualMetric,
    n_target: usize,
    seed: u64,
) -> Result<TextureAssignment, ReduceError> {
    if n_target == 0 {
        return Err(ReduceError::ZeroTarget);
    }
    let d = DistanceMatrix::from_images(images, metric)?;
    reduce_with_matrix(&d, n_target, seed)
}
