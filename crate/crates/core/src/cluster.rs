//! Strand clustering under the sample-wise shape distance.
//!
//! Distance between two strands is the mean squared distance between
//! corresponding samples. Clustering is Lloyd's k-means with k-means++
//! seeding; centroids are per-sample mean strands.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hairio::{HairModel, Strand};
use crate::math::Vec3;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("sample count mismatch: {0} vs {1}")]
    SampleMismatch(usize, usize),
    #[error("number of clusters must be positive")]
    ZeroClusters,
    #[error("{clusters} clusters requested for {strands} strands")]
    TooManyClusters { clusters: usize, strands: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrandCluster {
    pub member_indices: Vec<usize>,
    pub mean_strand: Strand,
}

/// Output of [`cluster_strands`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<StrandCluster>,
    /// Cluster index of every strand.
    pub assignment: Vec<usize>,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    /// Writes `strand_index cluster_index` lines.
    pub fn write_assignment(&self, path: &Path) -> Result<(), ClusterError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, c) in self.assignment.iter().enumerate() {
            writeln!(out, "{i} {c}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean over corresponding samples of the squared sample distance.
pub fn strand_distance(a: &Strand, b: &Strand) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::SampleMismatch(a.len(), b.len()));
    }
    Ok(distance_unchecked(&a.samples, &b.samples))
}

fn distance_unchecked(a: &[Vec3], b: &[Vec3]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    sum / a.len() as f64
}

/// Per-sample arithmetic mean of the given strands.
pub fn mean_strand(model: &HairModel, members: &[usize]) -> Strand {
    let n = model.samples_per_strand();
    let mut acc = vec![Vec3::zeros(); n];
    for &i in members {
        for (a, p) in acc.iter_mut().zip(&model.strands[i].samples) {
            *a += p;
        }
    }
    let inv = 1.0 / members.len().max(1) as f64;
    Strand::new(acc.into_iter().map(|a| a * inv).collect())
}

pub fn cluster_strands(
    model: &HairModel,
    n_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering, ClusterError> {
    let n = model.len();
    if n_clusters == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if n_clusters > n {
        return Err(ClusterError::TooManyClusters {
            clusters: n_clusters,
            strands: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(model, n_clusters, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let nearest: Vec<(usize, f64)> = model
            .strands
            .par_iter()
            .map(|s| nearest_center(&s.samples, &centers))
            .collect();
        let mut next: Vec<usize> = nearest.iter().map(|&(c, _)| c).collect();
        reseed_empty(&mut next, &nearest, n_clusters);
        let changed = next != assignment;
        assignment = next;
        centers = (0..n_clusters)
            .map(|c| {
                let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
                mean_strand(model, &members).samples
            })
            .collect();
        let inertia = inertia_of(model, &assignment, &centers);
        if let Some(&prev) = inertia_history.last() {
            debug_assert!(
                inertia <= prev * (1.0 + 1e-12) + 1e-12,
                "inertia increased: {prev} -> {inertia}"
            );
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }
    }

    let clusters = centers
        .into_iter()
        .enumerate()
        .map(|(c, mean)| StrandCluster {
            member_indices: (0..n).filter(|&i| assignment[i] == c).collect(),
            mean_strand: Strand::new(mean),
        })
        .collect();
    Ok(Clustering {
        clusters,
        assignment,
        inertia_history,
        iterations,
    })
}

/// k-means++ seeding under the strand distance. Seeds are distinct strands.
fn seed_plus_plus(model: &HairModel, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec3>> {
    let n = model.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centers = vec![model.strands[first].samples.clone()];
    let mut best: Vec<f64> = model
        .strands
        .par_iter()
        .map(|s| distance_unchecked(&s.samples, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| best[i]).sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                if best[i] > 0.0 {
                    pick = Some(i);
                    target -= best[i];
                    if target <= 0.0 {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            // Remaining strands duplicate existing seeds.
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        let c = model.strands[pick].samples.clone();
        best.par_iter_mut()
            .zip(model.strands.par_iter())
            .for_each(|(b, s)| *b = b.min(distance_unchecked(&s.samples, &c)));
        centers.push(c);
    }
    centers
}

fn nearest_center(samples: &[Vec3], centers: &[Vec<Vec3>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = distance_unchecked(samples, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Gives every empty cluster the strand currently farthest from its center.
fn reseed_empty(assignment: &mut [usize], nearest: &[(usize, f64)], k: usize) {
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    let mut dist: Vec<f64> = nearest.iter().map(|&(_, d)| d).collect();
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        // Farthest strand whose cluster can spare it; ties keep the lowest index.
        let mut far: Option<usize> = None;
        for i in 0..assignment.len() {
            if counts[assignment[i]] > 1 && far.map_or(true, |f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            counts[assignment[i]] -= 1;
            assignment[i] = c;
            counts[c] = 1;
            dist[i] = 0.0;
        }
    }
}

fn inertia_of(model: &HairModel, assignment: &[usize], centers: &[Vec<Vec3>]) -> f64 {
    model
        .strands
        .iter()
        .zip(assignment)
        .map(|(s, &c)| distance_unchecked(&s.samples, &centers[c]))
        .sum()
}
