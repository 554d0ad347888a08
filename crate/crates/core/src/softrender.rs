//! Orthographic soft-edged ribbon rasterizer with a hand-written reverse pass.
//!
//! Strands are drawn as camera-facing ribbons. Each ribbon segment is a
//! screen-space quad; a pixel belongs to a quad when its center lies on the
//! inner side of the two cross edges, and within half a pixel outside the
//! side edges. Coverage ramps linearly across that one-pixel band, and the
//! root and tip cross edges get the same band. Visibility is a hard
//! nearest-depth test for tangent and depth. The mask takes the largest
//! coverage of any fragment at the pixel, so the soft fringe of a strand in
//! front of a fully covered pixel does not punch a hole in the silhouette.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hairio::BoundingSphere;
use crate::math::{Vec2, Vec3};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("backward called before any forward pass")]
    NoForwardPass,
    #[error("backward inputs do not match the recorded forward pass: {0}")]
    Mismatch(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

/// Film margin over the bounding diameter.
pub const FILM_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewCamera {
    /// Viewing direction (from the camera into the scene).
    pub direction: Vec3,
    pub up: Vec3,
    pub film_center: Vec3,
    /// Side length of the square film in world units.
    pub film_extent: f64,
    /// Depth is normalized over `film_center +- depth_radius` along `direction`.
    pub depth_radius: f64,
    pub resolution: usize,
}

impl ViewCamera {
    pub fn looking(direction: Vec3, bounds: &BoundingSphere, resolution: usize) -> Self {
        let f = direction.normalize();
        let mut helper = Vec3::y();
        if f.dot(&helper).abs() > 0.999 {
            helper = Vec3::z();
        }
        let up = (helper - f * f.dot(&helper)).normalize();
        let radius = bounds.radius.max(1e-9);
        Self {
            direction: f,
            up,
            film_center: bounds.center,
            film_extent: 2.0 * radius * FILM_MARGIN,
            depth_radius: radius,
            resolution,
        }
    }

    pub fn right(&self) -> Vec3 {
        self.direction.cross(&self.up)
    }

    fn pixels_per_unit(&self) -> f64 {
        self.resolution as f64 / self.film_extent
    }

    /// Continuous pixel coordinates; pixel (i, j) has its center at (i + 0.5, j + 0.5).
    pub fn to_screen(&self, p: &Vec3) -> Vec2 {
        let d = p - self.film_center;
        let n = self.resolution as f64;
        Vec2::new(
            (d.dot(&self.right()) / self.film_extent + 0.5) * n,
            (0.5 - d.dot(&self.up) / self.film_extent) * n,
        )
    }

    /// Linear part of [`Self::to_screen`].
    pub fn screen_vector(&self, v: &Vec3) -> Vec2 {
        let k = self.pixels_per_unit();
        Vec2::new(v.dot(&self.right()) * k, -v.dot(&self.up) * k)
    }

    /// Transpose of [`Self::screen_vector`].
    pub fn screen_vector_transpose(&self, g: &Vec2) -> Vec3 {
        (self.right() * g.x - self.up * g.y) * self.pixels_per_unit()
    }

    pub fn depth(&self, p: &Vec3) -> f64 {
        ((p - self.film_center).dot(&self.direction) + self.depth_radius) / (2.0 * self.depth_radius)
    }

    /// World vector in camera coordinates (right, up, toward the camera).
    pub fn to_camera(&self, v: &Vec3) -> Vec3 {
        Vec3::new(v.dot(&self.right()), v.dot(&self.up), -v.dot(&self.direction))
    }

    fn from_camera_transpose(&self, g: &Vec3) -> Vec3 {
        self.right() * g.x + self.up * g.y - self.direction * g.z
    }
}

/// `n` Fibonacci-sphere viewing directions around `bounds`.
pub fn sample_views(n: usize, bounds: &BoundingSphere, resolution: usize) -> Vec<ViewCamera> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            let eye = Vec3::new(r * phi.cos(), y, r * phi.sin());
            ViewCamera::looking(-eye, bounds, resolution)
        })
        .collect()
}

/// A strand drawn as a ribbon with per-sample tangent attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ribbon {
    pub points: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RibbonGrads {
    pub points: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub width: f64,
}

impl RibbonGrads {
    fn zeros(n: usize) -> Self {
        Self {
            points: vec![Vec3::zeros(); n],
            tangents: vec![Vec3::zeros(); n],
            width: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum OffsetSource {
    /// Cross product of segment `k` with the view direction.
    Segment(usize),
    /// Same as the offset of an earlier sample.
    Copy(usize),
    CameraRight,
}

/// Unit offset directions of a ribbon and where each came from.
struct Offsets {
    dirs: Vec<Vec3>,
    norms: Vec<f64>,
    sources: Vec<OffsetSource>,
}

fn ribbon_offsets(points: &[Vec3], camera: &ViewCamera) -> Offsets {
    let n = points.len();
    let f = camera.direction;
    let mut dirs = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for j in 0..n {
        let seg = j.min(n.saturating_sub(2));
        let d = if n >= 2 { points[seg + 1] - points[seg] } else { Vec3::zeros() };
        let m = d.cross(&f);
        let len = m.norm();
        if len > 1e-9 * d.norm() && len > 1e-300 {
            dirs.push(m / len);
            norms.push(len);
            sources.push(OffsetSource::Segment(seg));
        } else if j > 0 {
            dirs.push(dirs[j - 1]);
            norms.push(0.0);
            sources.push(OffsetSource::Copy(j - 1));
        } else {
            dirs.push(camera.right());
            norms.push(0.0);
            sources.push(OffsetSource::CameraRight);
        }
    }
    Offsets { dirs, norms, sources }
}

/// Camera-facing triangle strip: vertex `2j` is the minus side and `2j + 1`
/// the plus side of sample `j`.
pub fn expand_ribbon(points: &[Vec3], width: f64, camera: &ViewCamera) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let off = ribbon_offsets(points, camera);
    let half = 0.5 * width;
    let vertices = points
        .iter()
        .zip(&off.dirs)
        .flat_map(|(p, o)| [p - o * half, p + o * half])
        .collect();
    (vertices, crate::cardgeom::strip_triangles(points.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Tangent,
    Depth,
    Mask,
}

/// Row-major channel images; tangent is interleaved RGB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImages {
    pub resolution: usize,
    pub tangent: Vec<f64>,
    pub depth: Vec<f64>,
    pub mask: Vec<f64>,
}

impl ChannelImages {
    /// Background: no coverage, far depth, zero tangent.
    pub fn empty(resolution: usize) -> Self {
        let n = resolution * resolution;
        Self {
            resolution,
            tangent: vec![0.0; 3 * n],
            depth: vec![1.0; n],
            mask: vec![0.0; n],
        }
    }

    pub fn zeros(resolution: usize) -> Self {
        let n = resolution * resolution;
        Self {
            resolution,
            tangent: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            mask: vec![0.0; n],
        }
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        match c {
            Channel::Tangent => &self.tangent,
            Channel::Depth => &self.depth,
            Channel::Mask => &self.mask,
        }
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut Vec<f64> {
        match c {
            Channel::Tangent => &mut self.tangent,
            Channel::Depth => &mut self.depth,
            Channel::Mask => &mut self.mask,
        }
    }

    /// 8-bit PNG of one channel.
    pub fn save_png(&self, c: Channel, path: &Path) -> Result<(), RenderError> {
        let n = self.resolution as u32;
        let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        match c {
            Channel::Tangent => {
                let buf: Vec<u8> = self.tangent.iter().map(|&x| q(x)).collect();
                image::RgbImage::from_raw(n, n, buf)
                    .expect("buffer size")
                    .save(path)?;
            }
            _ => {
                let buf: Vec<u8> = self.channel(c).iter().map(|&x| q(x)).collect();
                image::GrayImage::from_raw(n, n, buf)
                    .expect("buffer size")
                    .save(path)?;
            }
        }
        Ok(())
    }
}

/// Signed values as a PNG: red for positive, blue for negative, scaled by
/// the largest magnitude.
pub fn save_signed_png(values: &[f64], resolution: usize, path: &Path) -> Result<(), RenderError> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let buf: Vec<u8> = values
        .iter()
        .flat_map(|&v| {
            let a = ((v.abs() / scale) * 255.0).round() as u8;
            if v >= 0.0 {
                [a, 0, 0]
            } else {
                [0, 0, a]
            }
        })
        .collect();
    image::RgbImage::from_raw(resolution as u32, resolution as u32, buf)
        .expect("buffer size")
        .save(path)?;
    Ok(())
}

/// Winning fragment of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Winner {
    pub ribbon: u32,
    pub quad: u32,
    /// The camera-space tangent was negated to face the camera.
    pub flipped: bool,
}

/// What the reverse pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterRecord {
    pub camera: ViewCamera,
    pub ribbon_sizes: Vec<usize>,
    /// Nearest fragment per pixel; supplies tangent and depth.
    pub winners: Vec<Option<Winner>>,
    /// Fragment with the largest coverage per pixel; supplies the mask.
    pub coverers: Vec<Option<(u32, u32)>>,
}

/// Screen-space data of one ribbon for one view.
struct ScreenRibbon {
    centers: Vec<Vec2>,
    /// Half-width offsets in pixels.
    offsets: Vec<Vec2>,
    depths: Vec<f64>,
    dirs: Offsets,
}

impl ScreenRibbon {
    fn new(r: &Ribbon, camera: &ViewCamera) -> Self {
        let dirs = ribbon_offsets(&r.points, camera);
        let half = 0.5 * r.width;
        Self {
            centers: r.points.iter().map(|p| camera.to_screen(p)).collect(),
            offsets: dirs.dirs.iter().map(|o| camera.screen_vector(o) * half).collect(),
            depths: r.points.iter().map(|p| camera.depth(p)).collect(),
            dirs,
        }
    }

    /// Quad corners: start-minus, start-plus, end-plus, end-minus.
    fn corners(&self, j: usize) -> [Vec2; 4] {
        [
            self.centers[j] - self.offsets[j],
            self.centers[j] + self.offsets[j],
            self.centers[j + 1] + self.offsets[j + 1],
            self.centers[j + 1] - self.offsets[j + 1],
        ]
    }
}

fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn orientation(c: &[Vec2; 4]) -> f64 {
    let mut area = 0.0;
    for k in 0..4 {
        area += cross2(&c[k], &c[(k + 1) % 4]);
    }
    area
}

fn edge_distance(e0: &Vec2, e1: &Vec2, p: &Vec2, sigma: f64) -> f64 {
    let e = e1 - e0;
    sigma * cross2(&e, &(p - e0)) / e.norm()
}

/// Gradients of [`edge_distance`] with respect to both edge endpoints.
fn edge_distance_grad(e0: &Vec2, e1: &Vec2, p: &Vec2, sigma: f64) -> (Vec2, Vec2) {
    let e = e1 - e0;
    let q = p - e0;
    let len = e.norm();
    let cr = cross2(&e, &q);
    let d_q = Vec2::new(-e.y, e.x) * (sigma / len);
    let d_e = (Vec2::new(q.y, -q.x) / len - e * (cr / (len * len * len))) * sigma;
    (-d_e - d_q, d_e)
}

/// Soft band half-width in pixels.
const BAND: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
struct Fragment {
    coverage: f64,
    /// Soft edge attaining the minimum, when coverage is strictly inside (0, 1).
    active_edge: Option<usize>,
    s: f64,
    s_free: bool,
    ds: f64,
    de: f64,
    sigma: f64,
    depth: f64,
}

fn eval_fragment(sr: &ScreenRibbon, j: usize, p: &Vec2) -> Option<Fragment> {
    let quads = sr.centers.len() - 1;
    let c = sr.corners(j);
    let area = orientation(&c);
    if !(area.abs() > 1e-12) {
        return None;
    }
    for k in 0..4 {
        if !((c[(k + 1) % 4] - c[k]).norm() > 1e-9) {
            return None;
        }
    }
    let sigma = area.signum();
    let dist = |k: usize| edge_distance(&c[k], &c[(k + 1) % 4], p, sigma);
    let ds = dist(0);
    let de = dist(2);
    let root = j == 0;
    let tip = j + 1 == quads;
    if ds < if root { -BAND } else { 0.0 } || de < if tip { -BAND } else { 0.0 } {
        return None;
    }
    let mut soft = [(1usize, dist(1)), (3, dist(3)), (0, 0.0), (0, 0.0)];
    let mut soft_count = 2;
    if root {
        soft[soft_count] = (0, ds);
        soft_count += 1;
    }
    if tip {
        soft[soft_count] = (2, de);
        soft_count += 1;
    }
    let (edge, m) = soft[..soft_count]
        .iter()
        .fold((usize::MAX, f64::INFINITY), |acc, &(k, d)| if d < acc.1 { (k, d) } else { acc });
    let raw = m + BAND;
    if !(raw > 0.0) {
        return None;
    }
    let coverage = raw.min(1.0);
    let denom = ds + de;
    let (s, s_free) = if denom > 0.0 {
        let s = ds / denom;
        if s < 0.0 {
            (0.0, false)
        } else if s > 1.0 {
            (1.0, false)
        } else {
            (s, true)
        }
    } else {
        (0.0, false)
    };
    let depth = (1.0 - s) * sr.depths[j] + s * sr.depths[j + 1];
    Some(Fragment {
        coverage,
        active_edge: if raw < 1.0 { Some(edge) } else { None },
        s,
        s_free,
        ds,
        de,
        sigma,
        depth,
    })
}

fn fragment_tangent(r: &Ribbon, j: usize, s: f64, camera: &ViewCamera) -> (Vec3, bool) {
    let t = r.tangents[j] * (1.0 - s) + r.tangents[j + 1] * s;
    let cam = camera.to_camera(&t);
    if cam.z < 0.0 {
        (-cam, true)
    } else {
        (cam, false)
    }
}

fn pixel_center(index: usize, n: usize) -> Vec2 {
    Vec2::new((index % n) as f64 + 0.5, (index / n) as f64 + 0.5)
}

fn quad_pixel_range(corners: &[Vec2; 4], n: usize) -> Option<(usize, usize, usize, usize)> {
    let pad = BAND + 1.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        x0 = x0.min(c.x);
        y0 = y0.min(c.y);
        x1 = x1.max(c.x);
        y1 = y1.max(c.y);
    }
    let nf = n as f64;
    if !(x1 + pad >= 0.0 && y1 + pad >= 0.0 && x0 - pad <= nf && y0 - pad <= nf) {
        return None;
    }
    let lo = |v: f64| ((v - pad).floor().max(0.0)) as usize;
    let hi = |v: f64| ((v + pad).ceil().min(nf - 1.0).max(0.0)) as usize;
    Some((lo(x0), lo(y0), hi(x1), hi(y1)))
}

/// Forward pass. Returns the channel images and the record needed for
/// [`rasterize_backward`].
pub fn rasterize(ribbons: &[Ribbon], camera: &ViewCamera) -> (ChannelImages, RasterRecord) {
    let n = camera.resolution;
    let mut images = ChannelImages::empty(n);
    let mut best: Vec<Option<(f64, Winner, Fragment)>> = vec![None; n * n];
    let mut cover: Vec<Option<(f64, (u32, u32))>> = vec![None; n * n];
    for (ri, r) in ribbons.iter().enumerate() {
        if r.points.len() < 2 {
            continue;
        }
        let sr = ScreenRibbon::new(r, camera);
        for j in 0..r.points.len() - 1 {
            let corners = sr.corners(j);
            let Some((x0, y0, x1, y1)) = quad_pixel_range(&corners, n) else {
                continue;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let idx = y * n + x;
                    let p = pixel_center(idx, n);
                    let Some(frag) = eval_fragment(&sr, j, &p) else {
                        continue;
                    };
                    // Fragments arrive in id order, so ties keep the earlier one.
                    if cover[idx].map_or(true, |(c, _)| frag.coverage > c) {
                        cover[idx] = Some((frag.coverage, (ri as u32, j as u32)));
                    }
                    if best[idx].as_ref().map_or(true, |b| frag.depth < b.0) {
                        let winner = Winner {
                            ribbon: ri as u32,
                            quad: j as u32,
                            flipped: false,
                        };
                        best[idx] = Some((frag.depth, winner, frag));
                    }
                }
            }
        }
    }
    let mut winners = vec![None; n * n];
    for (idx, b) in best.into_iter().enumerate() {
        let Some((_, mut w, frag)) = b else { continue };
        let r = &ribbons[w.ribbon as usize];
        let (t, flipped) = fragment_tangent(r, w.quad as usize, frag.s, camera);
        w.flipped = flipped;
        let c = frag.coverage;
        images.mask[idx] = cover[idx].map_or(0.0, |(c, _)| c);
        images.depth[idx] = c * frag.depth + (1.0 - c);
        for k in 0..3 {
            images.tangent[3 * idx + k] = c * (t[k] + 1.0) * 0.5;
        }
        winners[idx] = Some(w);
    }
    let record = RasterRecord {
        camera: camera.clone(),
        ribbon_sizes: ribbons.iter().map(|r| r.points.len()).collect(),
        winners,
        coverers: cover.into_iter().map(|c| c.map(|(_, id)| id)).collect(),
    };
    (images, record)
}

/// Reverse pass: image gradients to ribbon point, tangent and width
/// gradients. Visibility is held fixed at the recorded winners.
pub fn rasterize_backward(
    ribbons: &[Ribbon],
    record: &RasterRecord,
    grads: &ChannelImages,
) -> Result<Vec<RibbonGrads>, RenderError> {
    let camera = &record.camera;
    let n = camera.resolution;
    if record.ribbon_sizes.len() != ribbons.len()
        || record.ribbon_sizes.iter().zip(ribbons).any(|(&s, r)| s != r.points.len())
    {
        return Err(RenderError::Mismatch("ribbon layout changed".into()));
    }
    if grads.resolution != n {
        return Err(RenderError::Mismatch(format!(
            "gradient resolution {} vs {}",
            grads.resolution, n
        )));
    }
    let mut out: Vec<RibbonGrads> = ribbons.iter().map(|r| RibbonGrads::zeros(r.points.len())).collect();
    // Per-ribbon screen-space accumulators.
    let mut g_center: Vec<Vec<Vec2>> = ribbons.iter().map(|r| vec![Vec2::zeros(); r.points.len()]).collect();
    let mut g_offset: Vec<Vec<Vec2>> = g_center.clone();
    let mut g_depth: Vec<Vec<f64>> = ribbons.iter().map(|r| vec![0.0; r.points.len()]).collect();
    let mut screens: Vec<Option<ScreenRibbon>> = (0..ribbons.len()).map(|_| None).collect();

    for idx in 0..n * n {
        let Some(w) = record.winners[idx] else { continue };
        let (ri, j) = (w.ribbon as usize, w.quad as usize);
        let r = &ribbons[ri];
        let sr = screens[ri].get_or_insert_with(|| ScreenRibbon::new(r, camera));
        let p = pixel_center(idx, n);
        let Some(frag) = eval_fragment(sr, j, &p) else {
            continue;
        };
        let c = frag.coverage;
        let gd = grads.depth[idx];
        let gt = Vec3::new(grads.tangent[3 * idx], grads.tangent[3 * idx + 1], grads.tangent[3 * idx + 2]);

        let (t_cam, flipped) = fragment_tangent(r, j, frag.s, camera);
        let mut g_c = gd * (frag.depth - 1.0);
        for k in 0..3 {
            g_c += gt[k] * (t_cam[k] + 1.0) * 0.5;
        }
        let mut g_s = 0.0;

        // Depth.
        let g_frag_depth = gd * c;
        g_depth[ri][j] += g_frag_depth * (1.0 - frag.s);
        g_depth[ri][j + 1] += g_frag_depth * frag.s;
        g_s += g_frag_depth * (sr.depths[j + 1] - sr.depths[j]);

        // Tangent attribute.
        let g_tcam = gt * (0.5 * c);
        let sign = if flipped { -1.0 } else { 1.0 };
        let g_lerp = camera.from_camera_transpose(&g_tcam) * sign;
        out[ri].tangents[j] += g_lerp * (1.0 - frag.s);
        out[ri].tangents[j + 1] += g_lerp * frag.s;
        g_s += g_lerp.dot(&(r.tangents[j + 1] - r.tangents[j]));

        // Edge distances to corners.
        let corners = sr.corners(j);
        let mut g_corner = [Vec2::zeros(); 4];
        let push_edge = |k: usize, g: f64, g_corner: &mut [Vec2; 4]| {
            if g == 0.0 {
                return;
            }
            let (g0, g1) = edge_distance_grad(&corners[k], &corners[(k + 1) % 4], &p, frag.sigma);
            g_corner[k] += g0 * g;
            g_corner[(k + 1) % 4] += g1 * g;
        };
        if let Some(k) = frag.active_edge {
            push_edge(k, g_c, &mut g_corner);
        }
        if frag.s_free {
            let denom = frag.ds + frag.de;
            let g_ds = g_s * frag.de / (denom * denom);
            let g_de = -g_s * frag.ds / (denom * denom);
            push_edge(0, g_ds, &mut g_corner);
            push_edge(2, g_de, &mut g_corner);
        }
        accumulate_corners(&g_corner, &mut g_center[ri], &mut g_offset[ri], j);
    }

    for idx in 0..n * n {
        let gm = grads.mask[idx];
        if gm == 0.0 {
            continue;
        }
        let Some((ri, j)) = record.coverers[idx] else { continue };
        let (ri, j) = (ri as usize, j as usize);
        let sr = screens[ri].get_or_insert_with(|| ScreenRibbon::new(&ribbons[ri], camera));
        let p = pixel_center(idx, n);
        let Some(frag) = eval_fragment(sr, j, &p) else {
            continue;
        };
        let Some(k) = frag.active_edge else { continue };
        let corners = sr.corners(j);
        let (g0, g1) = edge_distance_grad(&corners[k], &corners[(k + 1) % 4], &p, frag.sigma);
        let mut g_corner = [Vec2::zeros(); 4];
        g_corner[k] += g0 * gm;
        g_corner[(k + 1) % 4] += g1 * gm;
        accumulate_corners(&g_corner, &mut g_center[ri], &mut g_offset[ri], j);
    }

    let f = camera.direction;
    for (ri, r) in ribbons.iter().enumerate() {
        let Some(sr) = &screens[ri] else { continue };
        let half = 0.5 * r.width;
        let g = &mut out[ri];
        let mut g_dir = vec![Vec3::zeros(); r.points.len()];
        for jj in 0..r.points.len() {
            g.points[jj] += camera.screen_vector_transpose(&g_center[ri][jj]);
            g.points[jj] += f * (g_depth[ri][jj] / (2.0 * camera.depth_radius));
            let so = camera.screen_vector(&sr.dirs.dirs[jj]);
            g.width += 0.5 * so.dot(&g_offset[ri][jj]);
            g_dir[jj] = camera.screen_vector_transpose(&g_offset[ri][jj]) * half;
        }
        for jj in (0..r.points.len()).rev() {
            match sr.dirs.sources[jj] {
                OffsetSource::Copy(k) => {
                    let v = g_dir[jj];
                    g_dir[k] += v;
                }
                OffsetSource::Segment(k) => {
                    let o = sr.dirs.dirs[jj];
                    let g_m = (g_dir[jj] - o * o.dot(&g_dir[jj])) / sr.dirs.norms[jj];
                    let g_d = f.cross(&g_m);
                    g.points[k + 1] += g_d;
                    g.points[k] -= g_d;
                }
                OffsetSource::CameraRight => {}
            }
        }
    }
    Ok(out)
}

fn accumulate_corners(g_corner: &[Vec2; 4], g_center: &mut [Vec2], g_offset: &mut [Vec2], j: usize) {
    g_center[j] += g_corner[0] + g_corner[1];
    g_offset[j] += g_corner[1] - g_corner[0];
    g_center[j + 1] += g_corner[2] + g_corner[3];
    g_offset[j + 1] += g_corner[2] - g_corner[3];
}

/// Forward/backward pair holding the last forward record.
#[derive(Debug, Default)]
pub struct Rasterizer {
    record: Option<RasterRecord>,
}

impl Rasterizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, ribbons: &[Ribbon], camera: &ViewCamera) -> ChannelImages {
        let (img, rec) = rasterize(ribbons, camera);
        self.record = Some(rec);
        img
    }

    pub fn backward(&self, ribbons: &[Ribbon], grads: &ChannelImages) -> Result<Vec<RibbonGrads>, RenderError> {
        let rec = self.record.as_ref().ok_or(RenderError::NoForwardPass)?;
        rasterize_backward(ribbons, rec, grads)
    }

    pub fn record(&self) -> Option<&RasterRecord> {
        self.record.as_ref()
    }
}

/// Ribbons for a strand model: geometric tangents and a shared width.
pub fn strand_ribbons<'a>(strands: impl Iterator<Item = &'a [Vec3]>, width: f64) -> Vec<Ribbon> {
    strands
        .map(|pts| {
            let n = pts.len();
            let tangents = (0..n)
                .map(|j| {
                    let k = j.min(n.saturating_sub(2));
                    (pts[k + 1] - pts[k]).try_normalize(0.0).unwrap_or_else(Vec3::zeros)
                })
                .collect();
            Ribbon {
                points: pts.to_vec(),
                tangents,
                width,
            }
        })
        .collect()
}
