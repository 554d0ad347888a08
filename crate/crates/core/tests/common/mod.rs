#![allow(dead_code)]
//! Fixtures and criterion checks shared by the integration suites and the
//! acceptance report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use haircard::cardgeom::{
    bishop_frames, build_card, card_widths, orientation_search, section_indices, CardGeometry, FrameField,
};
use haircard::cluster::{cluster_strands, mean_strand, strand_distance, StrandCluster};
use haircard::config::PipelineConfig;
use haircard::hairio::{HairModel, HeadMesh, Strand};
use haircard::losses::{collision_loss, dice_loss, total_loss, LossWeights, MatchNorm, MeshSdf};
use haircard::math::{Vec2, Vec3};
use haircard::model::CardModel;
use haircard::optimize::{flatten_params, unflatten_params};
use haircard::pipeline::{OptimSummary, Pipeline, Stage};
use haircard::softrender::{rasterize, sample_views, ChannelImages, ViewCamera};
use haircard::stages::{initial_model, reference_renders, FitParams};
use haircard::synth::{icosphere, synthetic_wig, WigParams};
use haircard::texreduce::{reduce_with_matrix, DistanceMatrix};
use haircard::texspace::{closest_point_on_card, project_cluster, reconstruct};
use haircard::metrics::EvalReport;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Runs every sub-check and joins the outcomes.
pub fn all(checks: &[(&str, fn() -> Check)]) -> Check {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (name, f) in checks {
        match f() {
            Ok(s) => ok.push(format!("{name}: {s}")),
            Err(s) => bad.push(format!("{name}: {s}")),
        }
    }
    if bad.is_empty() {
        Ok(ok.join("; "))
    } else {
        Err(bad.join("; "))
    }
}

// ---------------------------------------------------------------------------
// Gradient check

pub struct GradFixture {
    pub hair: HairModel,
    pub model: CardModel,
    pub views: Vec<ViewCamera>,
    pub refs: Vec<ChannelImages>,
    pub sdf: MeshSdf,
    pub head: HeadMesh,
}

/// Five strands of one lock on a single card, perturbed away from the
/// projection so that every term has a non-trivial gradient, with a head
/// sphere that swallows part of the card.
pub fn grad_fixture() -> GradFixture {
    let hair = synthetic_wig(&WigParams {
        strands: 5,
        locks: 1,
        seed: 4,
        ..WigParams::default()
    });
    let r = hair.bounds.radius;
    let clustering = cluster_strands(&hair, 1, 0, 100).unwrap();
    let width = 2.0 * r / 64.0;
    let params = FitParams {
        n_quads: 4,
        n_circle_samples: 36,
        min_width: 1e-3 * r,
        crossed: false,
        strand_width: width,
    };
    let (mut model, _) = initial_model(&hair, &clustering, &params).unwrap();
    let mut g = rng(11);
    for s in &mut model.textures[0].strands {
        for uv in &mut s.uv {
            *uv = Vec2::new(
                (uv.x + g.gen_range(-0.05..0.05)).clamp(0.02, 0.98),
                (uv.y + g.gen_range(-0.01..0.01)).clamp(0.02, 0.98),
            );
        }
        for t in &mut s.tangents {
            *t = (*t + Vec3::new(g.gen_range(-0.3..0.3), g.gen_range(-0.3..0.3), g.gen_range(-0.3..0.3))).normalize();
        }
        s.width *= g.gen_range(1.5..3.0);
    }
    // Head radius chosen so about a third of the rail vertices are inside.
    let mut d: Vec<f64> = model.cards[0].geometry.vertices.iter().map(|v| v.norm()).collect();
    d.sort_by(f64::total_cmp);
    let head = icosphere(3, d[d.len() / 3] + 1e-3, Vec3::zeros());
    let sdf = MeshSdf::new(&head);
    let views = sample_views(3, &hair.bounds, 64);
    let refs = reference_renders(&hair, &views, width);
    GradFixture {
        hair,
        model,
        views,
        refs,
        sdf,
        head,
    }
}

pub const TERMS: [&str; 5] = ["tangent", "depth", "dice", "match", "collision"];
pub const CLASSES: [&str; 4] = ["rail", "uv", "tangent", "width"];

pub fn one_hot(term: usize) -> LossWeights {
    let mut w = LossWeights::zero();
    match term {
        0 => w.tangent = 1.0,
        1 => w.depth = 1.0,
        2 => w.dice = 1.0,
        3 => w.matching = 1.0,
        _ => w.collision = 1.0,
    }
    w
}

/// Whether `term` depends on parameters of `class` at all.
pub fn coupled(term: usize, class: usize) -> bool {
    match (term, class) {
        (4, c) => c == 0,
        (1 | 2, 2) => false,
        (3, 3) => false,
        _ => true,
    }
}

/// Index ranges of the four parameter classes in the flattened layout.
pub fn class_ranges(model: &CardModel) -> [std::ops::Range<usize>; 4] {
    let (x, rail) = flatten_params(model);
    let samples: usize = model.textures.iter().flat_map(|t| &t.strands).map(|s| s.uv.len()).sum();
    let uv_end = rail + 2 * samples;
    let tan_end = uv_end + 3 * samples;
    [0..rail, rail..uv_end, uv_end..tan_end, tan_end..x.len()]
}

/// Everything a discrete change of which would put a kink between `x - h`
/// and `x + h`: visible and covering fragments, chart triangles and the
/// clamped flag of every lifted sample.
fn discrete_state(model: &CardModel, views: &[ViewCamera]) -> Vec<u64> {
    let lifted = model.lift_all();
    let ribbons = model.ribbons(&lifted);
    let mut key = Vec::new();
    for v in views {
        let rec = rasterize(&ribbons, v).1;
        for w in &rec.winners {
            key.push(w.map_or(u64::MAX, |w| ((w.ribbon as u64) << 33) | ((w.quad as u64) << 1) | w.flipped as u64));
        }
        for c in &rec.coverers {
            key.push(c.map_or(u64::MAX, |(a, b)| ((a as u64) << 32) | b as u64));
        }
    }
    for l in &lifted {
        for loc in l.locations.iter().flatten() {
            key.push(((loc.triangle as u64) << 1) | loc.clamped as u64);
        }
    }
    key
}

pub struct GradReport {
    pub checked: BTreeMap<(usize, usize), usize>,
    pub excluded: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

/// Central differences against the analytic gradient for every term and
/// parameter class.
pub fn gradient_check(fx: &GradFixture, per_class: usize, h: f64) -> GradReport {
    let start = Instant::now();
    let (x0, _) = flatten_params(&fx.model);
    let ranges = class_ranges(&fx.model);
    let with = |x: &[f64]| {
        let mut m = fx.model.clone();
        unflatten_params(&mut m, x);
        m
    };
    let base_state = discrete_state(&fx.model, &fx.views);
    let mut state_cache: BTreeMap<usize, bool> = BTreeMap::new();
    let mut stable = |i: usize| {
        *state_cache.entry(i).or_insert_with(|| {
            [h, -h].iter().all(|d| {
                let mut x = x0.clone();
                x[i] += d;
                discrete_state(&with(&x), &fx.views) == base_state
            })
        })
    };
    let mut report = GradReport {
        checked: BTreeMap::new(),
        excluded: 0,
        max_rel: 0.0,
        failures: Vec::new(),
        elapsed: Duration::ZERO,
    };
    let mut pick = rng(23);
    for term in 0..TERMS.len() {
        let w = one_hot(term);
        let eval = |x: &[f64]| total_loss(&with(x), &fx.views, &fx.refs, &w, Some(&fx.sdf), MatchNorm::PerSample).unwrap();
        let g = eval(&x0).grads.flatten();
        let gmax = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let floor = 1e-6 * gmax.max(1e-12);
        for (class, range) in ranges.iter().enumerate() {
            // The largest entries plus a random sample of the rest.
            let mut idx: Vec<usize> = range.clone().collect();
            idx.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()).then(a.cmp(b)));
            let mut chosen: Vec<usize> = idx.iter().take(per_class / 2).copied().collect();
            while chosen.len() < per_class.min(idx.len()) {
                let i = idx[pick.gen_range(0..idx.len())];
                if !chosen.contains(&i) {
                    chosen.push(i);
                }
            }
            for i in chosen {
                if !stable(i) {
                    report.excluded += 1;
                    continue;
                }
                let mut xp = x0.clone();
                xp[i] += h;
                let mut xm = x0.clone();
                xm[i] -= h;
                let fd = (eval(&xp).value - eval(&xm).value) / (2.0 * h);
                let an = g[i];
                let scale = fd.abs().max(an.abs());
                if !coupled(term, class) {
                    if an != 0.0 || fd.abs() > floor {
                        report.failures.push(format!("{} / {} #{i}: expected zero, fd {fd:.3e} an {an:.3e}", TERMS[term], CLASSES[class]));
                    }
                    continue;
                }
                if scale <= floor {
                    continue;
                }
                let rel = (fd - an).abs() / scale;
                report.max_rel = report.max_rel.max(rel);
                *report.checked.entry((term, class)).or_default() += 1;
                if rel >= 1e-2 {
                    report.failures.push(format!("{} / {} #{i}: fd {fd:.6e} an {an:.6e} rel {rel:.2e}", TERMS[term], CLASSES[class]));
                }
            }
        }
    }
    for term in 0..TERMS.len() {
        for class in 0..CLASSES.len() {
            if coupled(term, class) && !report.checked.contains_key(&(term, class)) {
                report.failures.push(format!("{} / {}: no usable parameter", TERMS[term], CLASSES[class]));
            }
        }
    }
    report.elapsed = start.elapsed();
    report
}

pub fn gradient_criterion() -> Check {
    let start = Instant::now();
    let fx = grad_fixture();
    let rep = gradient_check(&fx, 24, 1e-6);
    let elapsed = start.elapsed();
    let total: usize = rep.checked.values().sum();
    let summary = format!(
        "{total} derivatives checked, {} excluded, max rel err {:.2e}, {:.1} s",
        rep.excluded,
        rep.max_rel,
        elapsed.as_secs_f64()
    );
    if !rep.failures.is_empty() {
        return Err(format!("{summary}; {}", rep.failures.join(", ")));
    }
    if elapsed > Duration::from_secs(60) {
        return Err(format!("{summary}; slower than 60 s"));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Geometry

pub fn helix(n: usize, radius: f64, pitch: f64, turns: f64) -> Strand {
    Strand::new(
        (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * turns * i as f64 / (n - 1) as f64;
                Vec3::new(radius * a.cos(), radius * a.sin(), pitch * a)
            })
            .collect(),
    )
}

pub fn frame_orthonormality_error(f: &FrameField) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..f.len() {
        let (t, n, b) = (f.tangents[j], f.normals[j], f.binormals[j]);
        for e in [t.norm() - 1.0, n.norm() - 1.0, b.norm() - 1.0, t.dot(&n), t.dot(&b), n.dot(&b)] {
            worst = worst.max(e.abs());
        }
        worst = worst.max((t.cross(&n) - b).norm());
    }
    worst
}

pub fn check_frame_orthonormality() -> Check {
    let mut g = rng(1);
    let wig = synthetic_wig(&WigParams {
        strands: 50,
        ..WigParams::default()
    });
    let mut strands: Vec<Strand> = wig.strands.clone();
    strands.push(helix(64, 0.2, 0.05, 3.0));
    strands.push(helix(200, 0.05, 0.01, 10.0));
    let mut worst = 0.0f64;
    for s in &strands {
        let t0 = (s.samples[1] - s.samples[0]).normalize();
        let n0 = haircard::math::any_perpendicular(&t0);
        let n0 = haircard::math::rotate_about_axis(&n0, &t0, g.gen_range(0.0..6.28));
        let f = bishop_frames(s, &n0).map_err(|e| e.to_string())?;
        worst = worst.max(frame_orthonormality_error(&f));
    }
    if worst <= 1e-6 {
        Ok(format!("max deviation {worst:.1e} over {} strands", strands.len()))
    } else {
        Err(format!("max deviation {worst:.3e}"))
    }
}

pub fn check_straight_frames() -> Check {
    let mut g = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dir = unit_vector(&mut g);
        let root = Vec3::new(g.gen_range(-1.0..1.0), g.gen_range(-1.0..1.0), g.gen_range(-1.0..1.0));
        let s = Strand::new((0..32).map(|i| root + dir * (0.03 * i as f64)).collect());
        let n0 = haircard::math::any_perpendicular(&dir);
        let f = bishop_frames(&s, &n0).map_err(|e| e.to_string())?;
        for j in 0..f.len() {
            worst = worst
                .max((f.tangents[j] - f.tangents[0]).norm())
                .max((f.normals[j] - f.normals[0]).norm())
                .max((f.binormals[j] - f.binormals[0]).norm());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max drift {worst:.1e}"))
    } else {
        Err(format!("frames drift by {worst:.3e}"))
    }
}

/// Points spread over every triangle in proportion to its area.
pub fn sample_card_surface(card: &CardGeometry, total: usize) -> Vec<Vec3> {
    let areas: Vec<f64> = (0..card.triangles.len())
        .map(|t| {
            let [a, b, c] = card.triangle(t);
            0.5 * (b - a).cross(&(c - a)).norm()
        })
        .collect();
    let sum: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(total + 2 * areas.len() * 64);
    for (t, area) in areas.iter().enumerate() {
        let [a, b, c] = card.triangle(t);
        // Barycentric lattice with about area/sum * total points.
        let want = (area / sum * total as f64).max(3.0);
        let m = ((2.0 * want).sqrt().ceil() as usize).max(1);
        for i in 0..=m {
            for j in 0..=(m - i) {
                let (u, v) = (i as f64 / m as f64, j as f64 / m as f64);
                out.push(a * u + b * v + c * (1.0 - u - v));
            }
        }
    }
    out
}

/// A card fitted to one cluster of the default wig.
pub fn wig_card(cluster_index: usize, n_quads: usize) -> (HairModel, StrandCluster, CardGeometry) {
    let hair = synthetic_wig(&WigParams::default());
    let clustering = cluster_strands(&hair, 8, 3, 100).unwrap();
    let cluster = clustering.clusters[cluster_index].clone();
    let fitted = haircard::cardgeom::fit_cluster(cluster_index, &cluster, &hair, n_quads, 36, 1e-3 * hair.bounds.radius, false).unwrap();
    (hair, cluster, fitted[0].geometry.clone())
}

pub fn check_closest_point_oracle() -> Check {
    let (hair, _, card) = wig_card(0, 8);
    let r = hair.bounds.radius;
    let samples = sample_card_surface(&card, 1_000_000);
    let lo = card.vertices.iter().fold(Vec3::repeat(f64::INFINITY), |a, b| a.inf(b)).add_scalar(-0.2 * r);
    let hi = card.vertices.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, b| a.sup(b)).add_scalar(0.2 * r);
    let mut g = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let q = Vec3::new(g.gen_range(lo.x..hi.x), g.gen_range(lo.y..hi.y), g.gen_range(lo.z..hi.z));
        let sp = closest_point_on_card(&q, &card);
        let [a, b, c] = card.triangle(sp.triangle_index);
        let w = sp.weights();
        let foot = a * w[0] + b * w[1] + c * w[2];
        let d_impl = (foot - q).norm();
        let d_oracle = samples.iter().map(|s| (s - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt();
        if d_impl > d_oracle + 1e-12 {
            return Err(format!("query {q:?}: implementation {d_impl} farther than a sample at {d_oracle}"));
        }
        worst = worst.max((d_oracle - d_impl).abs());
    }
    let tol = 2e-3 * r;
    if worst <= tol {
        Ok(format!("{} samples, max gap {:.2e} (tolerance {tol:.2e})", samples.len(), worst))
    } else {
        Err(format!("max gap {worst:.3e} exceeds {tol:.3e}"))
    }
}

/// A cluster whose members all lie near one plane: an arc mean with members
/// offset in the plane and along the plane normal in mirrored pairs, so the
/// member mean is exactly the arc.
pub struct PlanarCluster {
    pub hair: HairModel,
    pub cluster: StrandCluster,
    pub normal: Vec3,
}

pub fn planar_cluster(g: &mut impl Rng, pairs: usize, samples: usize, normal_offset: f64) -> PlanarCluster {
    let normal = unit_vector(g);
    let e1 = haircard::math::any_perpendicular(&normal);
    let e2 = normal.cross(&e1);
    let length = g.gen_range(0.5..1.5);
    let curvature: f64 = g.gen_range(-1.0..1.0);
    let root = Vec3::new(g.gen_range(-1.0..1.0), g.gen_range(-1.0..1.0), g.gen_range(-1.0..1.0));
    let ds = length / (samples - 1) as f64;
    let mut mean = vec![root];
    for j in 1..samples {
        let a = curvature * ds * j as f64;
        mean.push(mean[j - 1] + (e1 * a.cos() + e2 * a.sin()) * ds);
    }
    // Cross-sections follow the forward differences of the samples.
    let side: Vec<Vec3> = (0..samples)
        .map(|j| {
            let k = j.min(samples - 2);
            normal.cross(&(mean[k + 1] - mean[k]).normalize())
        })
        .collect();
    let mut strands = Vec::new();
    for _ in 0..pairs {
        let o = g.gen_range(0.01..0.08) * length;
        let wobble = g.gen_range(0.0..6.28);
        let z = g.gen_range(-1.0..1.0) * normal_offset * length;
        for sign in [1.0, -1.0] {
            strands.push(Strand::new(
                (0..samples)
                    .map(|j| {
                        let off = o * (1.0 + 0.3 * (wobble + j as f64 * 0.4).sin());
                        mean[j] + side[j] * (sign * off) + normal * (sign * z)
                    })
                    .collect(),
            ));
        }
    }
    let hair = HairModel::new(strands).unwrap();
    let members: Vec<usize> = (0..hair.len()).collect();
    let cluster = StrandCluster {
        mean_strand: mean_strand(&hair, &members),
        member_indices: members,
    };
    PlanarCluster { hair, cluster, normal }
}

pub fn check_roundtrip() -> Check {
    let mut g = rng(7);
    let mut worst_rel = 0.0f64;
    for _ in 0..25 {
        let pc = planar_cluster(&mut g, 4, 32, 0.02);
        let r = pc.hair.bounds.radius;
        let mean = &pc.cluster.mean_strand;
        let frames = bishop_frames(mean, &pc.normal).map_err(|e| e.to_string())?;
        let widths = card_widths(&pc.cluster, &pc.hair, &frames);
        let card = build_card(mean, &frames, &widths, mean.len() - 1, 1e-3 * r).map_err(|e| e.to_string())?;
        let tex = project_cluster(&pc.cluster, &card, &pc.hair, 0.01).map_err(|e| e.to_string())?;
        let back = reconstruct(&tex, &card);
        for (s, rec) in tex.strands.iter().zip(&back) {
            for (p, q) in pc.hair.strands[s.source].samples.iter().zip(rec) {
                worst_rel = worst_rel.max((p - q).norm() / r);
            }
        }
    }
    if worst_rel <= 1e-5 {
        Ok(format!("25 clusters, max error {worst_rel:.1e} radius"))
    } else {
        Err(format!("max error {worst_rel:.3e} radius"))
    }
}

pub fn check_stride() -> Check {
    let got = section_indices(32, 4).map_err(|e| e.to_string())?;
    if got != [0, 8, 16, 24, 31] {
        return Err(format!("32 samples / 4 quads gave {got:?}"));
    }
    for samples in 2..40 {
        for quads in 1..samples {
            let s = section_indices(samples, quads).map_err(|e| e.to_string())?;
            let expected: Vec<usize> = (0..=quads).map(|k| (k * (samples - 1) + quads - 1) / quads).collect();
            if s != expected || s[0] != 0 || *s.last().unwrap() != samples - 1 {
                return Err(format!("{samples} samples / {quads} quads gave {s:?}"));
            }
        }
    }
    Ok("endpoints kept, strides match".into())
}

pub fn geometry_criterion() -> Check {
    all(&[
        ("frames", check_frame_orthonormality),
        ("straight", check_straight_frames),
        ("closest point", check_closest_point_oracle),
        ("roundtrip", check_roundtrip),
    ])
}

// ---------------------------------------------------------------------------
// Clustering

pub fn naive_gamma(a: &Strand, b: &Strand) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.len() {
        let dx = a.samples[j].x - b.samples[j].x;
        let dy = a.samples[j].y - b.samples[j].y;
        let dz = a.samples[j].z - b.samples[j].z;
        acc += dx * dx + dy * dy + dz * dz;
    }
    acc / a.len() as f64
}

pub fn check_gamma() -> Check {
    let hair = synthetic_wig(&WigParams {
        strands: 60,
        ..WigParams::default()
    });
    let mut worst = 0.0f64;
    for a in &hair.strands {
        for b in &hair.strands {
            let got = strand_distance(a, b).map_err(|e| e.to_string())?;
            let want = naive_gamma(a, b);
            if want == 0.0 {
                if got != 0.0 {
                    return Err("non-zero self distance".into());
                }
                continue;
            }
            worst = worst.max((got - want).abs() / want);
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max rel diff {worst:.1e}"))
    } else {
        Err(format!("max rel diff {worst:.3e}"))
    }
}

/// Two tight bundles of ten strands `separation` apart, in shuffled order.
pub fn two_bundles(seed: u64, separation: f64) -> (HairModel, Vec<usize>) {
    let mut g = rng(seed);
    let mut strands = Vec::new();
    let mut labels = Vec::new();
    for bundle in 0..2 {
        let origin = Vec3::new(separation * bundle as f64, 0.0, 0.0);
        for _ in 0..10 {
            let jitter = Vec3::new(g.gen_range(-0.1..0.1), g.gen_range(-0.1..0.1), g.gen_range(-0.1..0.1));
            strands.push((bundle, Strand::new((0..16).map(|j| origin + jitter + Vec3::new(0.0, -0.1 * j as f64, 0.0)).collect())));
        }
    }
    for i in (1..strands.len()).rev() {
        strands.swap(i, g.gen_range(0..=i));
    }
    for (l, _) in &strands {
        labels.push(*l);
    }
    (HairModel::new(strands.into_iter().map(|(_, s)| s).collect()).unwrap(), labels)
}

pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn check_two_bundles() -> Check {
    for seed in 0..10 {
        let (hair, labels) = two_bundles(seed, 100.0);
        let c = cluster_strands(&hair, 2, seed, 100).map_err(|e| e.to_string())?;
        if !same_partition(&c.assignment, &labels) {
            return Err(format!("seed {seed}: bundles mixed"));
        }
        // Brute force: no other 2-partition has lower inertia.
        let n = hair.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let groups: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut inertia = 0.0;
            for k in 0..2 {
                let members: Vec<usize> = (0..n).filter(|&i| groups[i] == k).collect();
                let m = mean_strand(&hair, &members);
                inertia += members.iter().map(|&i| naive_gamma(&hair.strands[i], &m)).sum::<f64>();
            }
            best = best.min(inertia);
        }
        if c.inertia() > best * (1.0 + 1e-9) {
            return Err(format!("seed {seed}: inertia {} above optimum {best}", c.inertia()));
        }
    }
    Ok("10 seeds recovered, optimal among all 2-partitions".into())
}

pub fn check_inertia_monotone() -> Check {
    let hair = synthetic_wig(&WigParams::default());
    for (k, seed) in [(8, 0), (16, 1), (32, 2)] {
        let c = cluster_strands(&hair, k, seed, 100).map_err(|e| e.to_string())?;
        for w in c.inertia_history.windows(2) {
            if w[1] > w[0] * (1.0 + 1e-12) {
                return Err(format!("k {k}: inertia rose from {} to {}", w[0], w[1]));
            }
        }
    }
    Ok("non-increasing for k = 8, 16, 32".into())
}

/// Random symmetric distances between points in the plane.
pub fn random_matrix(g: &mut impl Rng, n: usize) -> DistanceMatrix {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (g.gen_range(0.0..1.0), g.gen_range(0.0..1.0))).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
        }
    }
    DistanceMatrix { n, values: data }
}

/// Smallest total member-to-medoid distance over every split into two
/// non-empty groups, each using its own best member as medoid.
pub fn best_two_partition(d: &DistanceMatrix) -> f64 {
    let n = d.n;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let mut total = 0.0;
        for k in 0..2u32 {
            let members: Vec<usize> = (0..n).filter(|&i| ((mask >> i) & 1) == k).collect();
            total += members
                .iter()
                .map(|&m| members.iter().map(|&i| d.get(i, m)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
        }
        best = best.min(total);
    }
    best
}

pub fn check_kmedoids_brute_force() -> Check {
    let mut g = rng(13);
    for inst in 0..200 {
        let d = random_matrix(&mut g, 6);
        let a = reduce_with_matrix(&d, 2, inst).map_err(|e| e.to_string())?;
        let got = a.objective(&d);
        let best = best_two_partition(&d);
        if got > best + 1e-12 {
            return Err(format!("instance {inst}: objective {got} above brute force {best}"));
        }
    }
    Ok("200 instances match the brute-force optimum".into())
}

pub fn clustering_criterion() -> Check {
    all(&[
        ("gamma", check_gamma),
        ("two bundles", check_two_bundles),
        ("inertia", check_inertia_monotone),
        ("k-medoids", check_kmedoids_brute_force),
    ])
}

// ---------------------------------------------------------------------------
// Orientation search

/// Angle between two lines through the origin, in degrees.
pub fn line_angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (a.normalize().dot(&b.normalize())).abs().min(1.0).acos().to_degrees()
}

pub fn orientation_criterion() -> Check {
    let mut g = rng(17);
    let mut worst_coarse = 0.0f64;
    let mut worst_fine = 0.0f64;
    for _ in 0..10 {
        let pc = planar_cluster(&mut g, 5, 32, 0.0);
        let coarse = orientation_search(&pc.cluster, &pc.hair, 36, 1e-6).map_err(|e| e.to_string())?;
        let fine = orientation_search(&pc.cluster, &pc.hair, 3600, 1e-6).map_err(|e| e.to_string())?;
        let fine_err = line_angle_deg(&fine.root_normal, &pc.normal);
        let coarse_err = line_angle_deg(&coarse.root_normal, &fine.root_normal);
        if coarse.candidate_errors.iter().any(|e| *e < coarse.projection_error) {
            return Err("selected candidate is not the minimum".into());
        }
        worst_coarse = worst_coarse.max(coarse_err);
        worst_fine = worst_fine.max(fine_err);
    }
    if worst_fine <= 0.1 + 1e-9 && worst_coarse <= 10.0 {
        Ok(format!("36-candidate pick within {worst_coarse:.2} deg of the 3600 sweep, sweep within {worst_fine:.3} deg of the plane normal"))
    } else {
        Err(format!("coarse {worst_coarse:.2} deg, fine {worst_fine:.3} deg"))
    }
}

// ---------------------------------------------------------------------------
// Loss identities

pub fn check_dice_values() -> Check {
    let a = vec![1.0, 1.0, 0.0, 0.0];
    let disjoint = vec![0.0, 0.0, 1.0, 1.0];
    let half = vec![0.0, 1.0, 0.0, 0.0];
    let same = dice_loss(&a, &a);
    let dis = dice_loss(&a, &disjoint);
    let h = dice_loss(&a, &half);
    if same != 0.0 || dis != 1.0 || (h - 1.0 / 3.0).abs() > f64::EPSILON {
        return Err(format!("dice(A,A) {same}, disjoint {dis}, half {h}"));
    }
    Ok("0, 1 and 1/3".into())
}

pub fn check_collision_values() -> Check {
    let head = icosphere(3, 1.0, Vec3::zeros());
    let sdf = MeshSdf::new(&head);
    let mut g = rng(19);
    let outside: Vec<Vec3> = (0..200).map(|_| unit_vector(&mut g) * g.gen_range(1.01..3.0)).collect();
    let out = collision_loss(&outside, &sdf);
    if out != 0.0 {
        return Err(format!("exterior points give {out}"));
    }
    let mut worst = 0.0f64;
    for (k, v) in head.vertices.iter().enumerate().step_by(37) {
        for d in [0.1, 0.25, 0.5] {
            let p = v.normalize() * (1.0 - d);
            let l = collision_loss(&[p], &sdf);
            let rel = (l / (d * d) - 1.0).abs();
            if rel > 0.02 {
                return Err(format!("vertex {k} depth {d}: loss {l}, expected {}", d * d));
            }
            worst = worst.max(rel);
        }
    }
    Ok(format!("exterior 0, interior within {:.2}% of d^2", 100.0 * worst))
}

pub fn check_weight_doubling() -> Check {
    let fx = grad_fixture();
    for w in [LossWeights::straight(), LossWeights::curly()] {
        let a = total_loss(&fx.model, &fx.views, &fx.refs, &w, Some(&fx.sdf), MatchNorm::PerSample).map_err(|e| e.to_string())?;
        let b = total_loss(&fx.model, &fx.views, &fx.refs, &w.scaled(2.0), Some(&fx.sdf), MatchNorm::PerSample)
            .map_err(|e| e.to_string())?;
        if ((b.value - 2.0 * a.value) / (2.0 * a.value)).abs() > 1e-12 {
            return Err(format!("loss {} vs doubled {}", a.value, b.value));
        }
        let (ga, gb) = (a.grads.flatten(), b.grads.flatten());
        let gmax = ga.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in ga.iter().zip(&gb) {
            let scale = (2.0 * x).abs().max(1e-300);
            if (y - 2.0 * x).abs() > 1e-12 * scale.max(1e-12 * gmax) {
                return Err(format!("gradient {x} vs doubled {y}"));
            }
        }
    }
    Ok("loss and gradients double".into())
}

pub fn loss_criterion() -> Check {
    all(&[
        ("dice", check_dice_values),
        ("collision", check_collision_values),
        ("weight doubling", check_weight_doubling),
    ])
}

// ---------------------------------------------------------------------------
// Pipeline runs

pub fn run_pipeline(cfg: PipelineConfig, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let p = Pipeline::open(cfg, out).map_err(|e| e.to_string())?;
    p.run_all().map_err(|e| e.to_string())?;
    Ok(start.elapsed())
}

/// A fast configuration that still runs every stage.
pub fn small_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.synth_strands = 120;
    c.n_cards = 6;
    c.n_textures = 3;
    c.epochs = 4;
    c.render_resolution = 32;
    c.eval_resolution = 32;
    c.train_views = 6;
    c.eval_views = 6;
    c.slot_width = 64;
    c.slot_height = 32;
    c.ao_rays = 8;
    c.cap_resolution = 128;
    c.checkpoint_every = 2;
    c
}

pub fn e2e_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.n_cards = 8;
    c.n_textures = 4;
    c.render_resolution = 64;
    c.eval_resolution = 64;
    c.epochs = 200;
    c.train_views = 12;
    c.eval_views = 12;
    c
}

pub fn e2e_criterion() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let elapsed = run_pipeline(e2e_config(), dir.path())?;
    let read = |p: PathBuf| std::fs::read_to_string(p).map_err(|e| e.to_string());
    let summary: OptimSummary =
        serde_json::from_str(&read(dir.path().join(Stage::Optimize.dir_name()).join("summary.json"))?).map_err(|e| e.to_string())?;
    let eval = dir.path().join(Stage::Eval.dir_name());
    let before = EvalReport::load(&eval.join("initial_report.json")).map_err(|e| e.to_string())?;
    let after = EvalReport::load(&eval.join("report.json")).map_err(|e| e.to_string())?;
    let improved = before
        .views
        .iter()
        .zip(&after.views)
        .filter(|(b, a)| a.coverage_error < b.coverage_error)
        .count();
    let reduction = 1.0 - summary.final_total / summary.initial_total;
    let detail = format!(
        "loss {:.4} -> {:.4} ({:.1}% lower), collision {:.1e}, coverage improved on {improved}/{} views, {:.0} s",
        summary.initial_total,
        summary.final_total,
        100.0 * reduction,
        summary.final_terms.collision,
        after.views.len(),
        elapsed.as_secs_f64()
    );
    let ok = reduction >= 0.30
        && summary.final_terms.collision <= 1e-10
        && improved >= 10
        && after.views.len() == 12
        && elapsed <= Duration::from_secs(600);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Relative path and contents of every file under `root`, sorted.
pub fn tree_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn determinism_criterion() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(small_config(), a.path())?;
    run_pipeline(small_config(), b.path())?;
    let fa = tree_files(a.path());
    let fb = tree_files(b.path());
    let names = |f: &[(PathBuf, Vec<u8>)]| f.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err("runs produced different file sets".into());
    }
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let kinds = ["manifest.txt", "report.json", ".png"];
    for k in kinds {
        if !fa.iter().any(|f| f.0.to_string_lossy().ends_with(k)) {
            return Err(format!("no {k} produced"));
        }
    }
    if differing.is_empty() {
        Ok(format!("{} files byte-identical", fa.len()))
    } else {
        Err(format!("differing files: {}", differing.join(", ")))
    }
}

/// Every key with its default, as written to `config.txt`.
pub const DEFAULT_CONFIG_TEXT: &str = "\
hair =
head =
n_strands = 0
n_samples = 32
n_cards = 64
n_textures = 32
n_quads = 8
crossed = false
cap = true
reduce = true
preset = straight
w_tangent = auto
w_depth = auto
w_dice = auto
w_match = auto
w_collision = auto
match_norm = per_sample
synth_strands = 500
synth_seed = 1
cluster_seed = 0
cluster_iters = 100
orientation_samples = 36
card_min_width = 0.001
strand_width = auto
reduce_seed = 0
reduce_tex_width = 128
reduce_tex_height = 64
distance_matrix =
render_resolution = 256
train_views = 12
views_per_step = 4
epochs = 200
lr = 0.001
rail_lr = 0.0001
optim_seed = 0
min_strand_width = 0.00001
checkpoint_every = 10
atlas_rows = 8
atlas_cols = 4
slot_width = 512
slot_height = 256
ao_rays = 32
ao_whole_model = false
bake_seed = 0
depth_16bit = false
eps_cap = 0.005
eps_root = 0.02
cap_resolution = 1024
cap_ao_saturation = 4
eval_views = 12
eval_resolution = 256
";

pub fn config_criterion() -> Check {
    let c = PipelineConfig::default();
    let mut bad = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_string());
        }
    };
    expect("n_samples", c.n_samples == 32);
    let atlas = c.atlas();
    expect("atlas size", atlas.width() == 2048 && atlas.height() == 2048);
    expect("slot grid", atlas.cols == 4 && atlas.rows == 8);
    expect("slot size", atlas.slot_width == 512 && atlas.slot_height == 256);
    let s = c.weights();
    expect("straight weights", [s.tangent, s.depth, s.dice, s.matching, s.collision] == [10.0, 10.0, 5.0, 3.0, 1e5]);
    let mut curly = c.clone();
    curly.set("preset", "curly").map_err(|e| e.to_string())?;
    let w = curly.weights();
    expect("curly weights", [w.tangent, w.depth, w.dice, w.matching, w.collision] == [5.0, 15.0, 3.0, 3.0, 1e5]);
    expect("eval views", c.eval_views == 12);
    expect("epochs", c.epochs == 200);
    expect("n_textures", c.n_textures == 32);
    expect("render resolution", c.render_resolution == 256);
    expect("snapshot", c.to_text().lines().map(str::trim_end).eq(DEFAULT_CONFIG_TEXT.lines()));
    expect("valid", c.validate().is_ok());
    if bad.is_empty() {
        Ok(format!("{} keys match the snapshot", PipelineConfig::KEYS.len()))
    } else {
        Err(format!("mismatch: {}", bad.join(", ")))
    }
}
