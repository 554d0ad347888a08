//! Texture atlas baking (tangent, depth, alpha, AO) and card export.
//!
//! Each retained texture fills one slot. Inside a slot, v runs along the
//! slot width and u along its height, so a card's length maps onto the long
//! side. Encodings:
//! - tangent: card-frame unit tangent (across, along, normal), stored as (t + 1) / 2;
//! - depth: z / (2 z_max) + 1/2, where z_max is the slot's largest |z|;
//! - alpha: stroke coverage;
//! - AO: unoccluded fraction of cosine-weighted rays about the card normal,
//!   1 where alpha is 0.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::cardgeom::CardGeometry;
use crate::math::{Aabb, Vec2, Vec3};
use crate::model::CardModel;
use crate::stroke::{Canvas, StrokeHit};
use crate::texreduce::chart_to_texel;
use crate::texspace::{chart_frame, locate_uv, reconstruct_point, CardTexture};

#[derive(Debug, Error)]
pub enum BakeError {
    #[error("{textures} textures do not fit in {slots} slots")]
    TooManyTextures { textures: usize, slots: usize },
    #[error("texture {0} is not used by any card")]
    UnusedTexture(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

/// Slot grid of the atlas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtlasLayout {
    pub rows: usize,
    pub cols: usize,
    pub slot_width: usize,
    pub slot_height: usize,
}

impl Default for AtlasLayout {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 4,
            slot_width: 512,
            slot_height: 256,
        }
    }
}

impl AtlasLayout {
    pub fn width(&self) -> usize {
        self.cols * self.slot_width
    }

    pub fn height(&self) -> usize {
        self.rows * self.slot_height
    }

    pub fn slots(&self) -> usize {
        self.rows * self.cols
    }

    /// (row, col) of slot `i`, filled row by row.
    pub fn slot_position(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    /// Normalized atlas position of chart point `uv` in slot `i`, with the
    /// origin at the top-left texel corner.
    pub fn atlas_uv(&self, i: usize, uv: Vec2) -> Vec2 {
        let (row, col) = self.slot_position(i);
        let t = chart_to_texel(uv, self.slot_width, self.slot_height);
        Vec2::new(
            (col * self.slot_width) as f64 + t.x,
            (row * self.slot_height) as f64 + t.y,
        )
        .component_div(&Vec2::new(self.width() as f64, self.height() as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BakeConfig {
    pub layout: AtlasLayout,
    pub ao_rays: usize,
    pub seed: u64,
    /// Occlude against every card instead of the representative card's cluster.
    pub ao_whole_model: bool,
    pub depth_16bit: bool,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self {
            layout: AtlasLayout::default(),
            ao_rays: 32,
            seed: 0,
            ao_whole_model: false,
            depth_16bit: false,
        }
    }
}

/// The four maps of one slot, row-major, `slot_width * slot_height` texels.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotImages {
    pub width: usize,
    pub height: usize,
    pub tangent: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub ao: Vec<f64>,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    pub layout: AtlasLayout,
    pub tangent: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub ao: Vec<f64>,
    /// Depth range of each used slot.
    pub slot_z_max: Vec<f64>,
}

/// Texel owner after stroke rasterization, with the interpolated sample.
struct TexelSample {
    uv: Vec2,
    z: f64,
    tangent: Vec3,
    strand: usize,
}

fn texel_samples(texture: &CardTexture, canvas: &Canvas) -> Vec<Option<TexelSample>> {
    canvas
        .hits
        .iter()
        .map(|h| {
            let StrokeHit { strand, segment, t, .. } = (*h)?;
            let s = &texture.strands[strand];
            let (a, b) = if s.len() >= 2 { (segment, segment + 1) } else { (0, 0) };
            let lerp = |x: f64, y: f64| x * (1.0 - t) + y * t;
            Some(TexelSample {
                uv: s.uv[a] * (1.0 - t) + s.uv[b] * t,
                z: lerp(s.z[a], s.z[b]),
                tangent: (s.tangents[a] * (1.0 - t) + s.tangents[b] * t)
                    .try_normalize(1e-12)
                    .unwrap_or(s.tangents[a]),
                strand,
            })
        })
        .collect()
}

fn draw_texture(texture: &CardTexture, card: &CardGeometry, width: usize, height: usize) -> Canvas {
    let mut canvas = Canvas::new(width, height);
    let texels_per_world = height as f64 / card.mean_width().max(1e-12);
    for (i, s) in texture.strands.iter().enumerate() {
        let pts: Vec<Vec2> = s.uv.iter().map(|uv| chart_to_texel(*uv, width, height)).collect();
        canvas.draw_polyline(i, &pts, 0.5 * s.width * texels_per_world);
    }
    canvas
}

/// Capsule occluders: strand segments lifted to 3D.
pub struct Occluders {
    segments: Vec<(Vec3, Vec3, f64, usize)>,
    bvh: Bvh,
}

impl Occluders {
    /// `strands` are (points, radius, owner id) triples.
    pub fn new(strands: impl IntoIterator<Item = (Vec<Vec3>, f64, usize)>) -> Self {
        let mut segments = Vec::new();
        for (pts, r, owner) in strands {
            for w in pts.windows(2) {
                segments.push((w[0], w[1], r, owner));
            }
        }
        let boxes: Vec<Aabb> = segments
            .iter()
            .map(|(a, b, r, _)| {
                let pad = Vec3::repeat(*r);
                Aabb {
                    min: a.inf(b) - pad,
                    max: a.sup(b) + pad,
                }
            })
            .collect();
        Self {
            bvh: Bvh::build(&boxes),
            segments,
        }
    }

    /// Whether a ray from `origin` along unit `dir` (up to `t_max`) hits a
    /// capsule not owned by `skip`.
    pub fn hit(&self, origin: &Vec3, dir: &Vec3, t_max: f64, skip: usize) -> bool {
        if self.segments.is_empty() {
            return false;
        }
        self.bvh.any_ray_hit(origin, dir, t_max, |i| {
            let (a, b, r, owner) = self.segments[i];
            owner != skip && segment_distance2(origin, &(origin + dir * t_max), &a, &b) < r * r
        })
    }
}

/// Squared distance between segments `p0 p1` and `q0 q1`.
pub fn segment_distance2(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-300 && e <= 1e-300 {
        return r.norm_squared();
    }
    if a <= 1e-300 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-300 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p0 + d1 * s - (q0 + d2 * t)).norm_squared()
}

/// Cosine-weighted direction about `frame[2]`.
fn cosine_direction(frame: &[Vec3; 3], r1: f64, r2: f64) -> Vec3 {
    let phi = 2.0 * std::f64::consts::PI * r1;
    let sin_t = r2.sqrt();
    let cos_t = (1.0 - r2).sqrt();
    frame[0] * (phi.cos() * sin_t) + frame[1] * (phi.sin() * sin_t) + frame[2] * cos_t
}

/// Lifts every strand of `texture` onto `card` as capsule owners
/// `owner_base + strand index`.
pub fn texture_occluders(texture: &CardTexture, card: &CardGeometry, owner_base: usize) -> Vec<(Vec<Vec3>, f64, usize)> {
    texture
        .strands
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pts = s.uv.iter().zip(&s.z).map(|(uv, z)| reconstruct_point(card, *uv, *z).0).collect();
            (pts, 0.5 * s.width, owner_base + i)
        })
        .collect()
}

/// AO of one slot. Texels without coverage get 1.
pub fn bake_ao(
    texture: &CardTexture,
    card: &CardGeometry,
    n_rays: usize,
    seed: u64,
    width: usize,
    height: usize,
    occluders: Option<&Occluders>,
) -> Vec<f64> {
    let canvas = draw_texture(texture, card, width, height);
    let samples = texel_samples(texture, &canvas);
    let local;
    let occ = match occluders {
        Some(o) => o,
        None => {
            local = Occluders::new(texture_occluders(texture, card, 0));
            &local
        }
    };
    ao_for_samples(&samples, card, n_rays, seed, occ, 0)
}

fn ao_for_samples(
    samples: &[Option<TexelSample>],
    card: &CardGeometry,
    n_rays: usize,
    seed: u64,
    occ: &Occluders,
    owner_base: usize,
) -> Vec<f64> {
    let reach = 4.0 * card.length().max(card.mean_width());
    samples
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let Some(s) = s else { return 1.0 };
            if n_rays == 0 {
                return 1.0;
            }
            let (p, loc) = reconstruct_point(card, s.uv, s.z);
            let frame = chart_frame(card, loc.triangle);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let mut open = 0usize;
            for _ in 0..n_rays {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let d = cosine_direction(&frame, r1, r2);
                if !occ.hit(&p, &d, reach, owner_base + s.strand) {
                    open += 1;
                }
            }
            open as f64 / n_rays as f64
        })
        .collect()
}

/// Tangent, depth and alpha of one slot plus AO against `occluders` (with
/// the owner id of the slot's first strand), or against the slot's own strands.
pub fn bake_slot(
    texture: &CardTexture,
    card: &CardGeometry,
    width: usize,
    height: usize,
    ao_rays: usize,
    seed: u64,
    occluders: Option<(&Occluders, usize)>,
) -> SlotImages {
    let canvas = draw_texture(texture, card, width, height);
    let samples = texel_samples(texture, &canvas);
    let z_max = texture.z_max();
    let n = width * height;
    let mut tangent = vec![[0.0; 3]; n];
    let mut depth = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    for (idx, (s, hit)) in samples.iter().zip(&canvas.hits).enumerate() {
        let (Some(s), Some(hit)) = (s, hit) else { continue };
        alpha[idx] = hit.coverage;
        let loc = locate_uv(card, s.uv);
        let [across, along, normal] = chart_frame(card, loc.triangle);
        let t = Vec3::new(s.tangent.dot(&across), s.tangent.dot(&along), s.tangent.dot(&normal));
        tangent[idx] = [(t.x + 1.0) * 0.5, (t.y + 1.0) * 0.5, (t.z + 1.0) * 0.5];
        depth[idx] = if z_max > 0.0 { s.z / (2.0 * z_max) + 0.5 } else { 0.5 };
    }
    let ao = match occluders {
        Some((occ, base)) => ao_for_samples(&samples, card, ao_rays, seed, occ, base),
        None => {
            let occ = Occluders::new(texture_occluders(texture, card, 0));
            ao_for_samples(&samples, card, ao_rays, seed, &occ, 0)
        }
    };
    SlotImages {
        width,
        height,
        tangent,
        depth,
        alpha,
        ao,
        z_max,
    }
}

/// First card using each texture.
pub fn first_instances(model: &CardModel) -> Result<Vec<usize>, BakeError> {
    (0..model.textures.len())
        .map(|t| {
            model
                .cards
                .iter()
                .position(|c| c.texture == t)
                .ok_or(BakeError::UnusedTexture(t))
        })
        .collect()
}

/// Bakes every texture of `model` into its slot, using `representatives[t]`
/// as the card that sets texture `t`'s world scale and 3D placement.
pub fn bake_atlas(model: &CardModel, representatives: &[usize], cfg: &BakeConfig) -> Result<TextureAtlas, BakeError> {
    let layout = cfg.layout;
    if model.textures.len() > layout.slots() {
        return Err(BakeError::TooManyTextures {
            textures: model.textures.len(),
            slots: layout.slots(),
        });
    }
    // Owner ids: a block of strand indices per card.
    let mut bases = Vec::with_capacity(model.cards.len());
    let mut next = 0;
    for c in &model.cards {
        bases.push(next);
        next += model.textures[c.texture].strands.len();
    }
    let occluders_of = |cards: &mut dyn Iterator<Item = usize>| {
        Occluders::new(cards.flat_map(|ci| {
            let c = &model.cards[ci];
            texture_occluders(&model.textures[c.texture], &c.geometry, bases[ci])
        }))
    };
    let whole = cfg.ao_whole_model.then(|| occluders_of(&mut (0..model.cards.len())));
    let slots: Vec<SlotImages> = model
        .textures
        .par_iter()
        .enumerate()
        .map(|(t, tex)| {
            let rep = representatives[t];
            let local;
            let occ = match &whole {
                Some(o) => o,
                None => {
                    let cluster = model.cards[rep].cluster;
                    local = occluders_of(&mut (0..model.cards.len()).filter(|&ci| model.cards[ci].cluster == cluster));
                    &local
                }
            };
            bake_slot(
                tex,
                &model.cards[rep].geometry,
                layout.slot_width,
                layout.slot_height,
                cfg.ao_rays,
                cfg.seed.wrapping_add(t as u64),
                Some((occ, bases[rep])),
            )
        })
        .collect();
    let (w, h) = (layout.width(), layout.height());
    let mut atlas = TextureAtlas {
        layout,
        tangent: vec![[0.0; 3]; w * h],
        depth: vec![0.0; w * h],
        alpha: vec![0.0; w * h],
        ao: vec![1.0; w * h],
        slot_z_max: slots.iter().map(|s| s.z_max).collect(),
    };
    for (i, s) in slots.iter().enumerate() {
        let (row, col) = layout.slot_position(i);
        for y in 0..s.height {
            for x in 0..s.width {
                let src = y * s.width + x;
                let dst = (row * layout.slot_height + y) * w + col * layout.slot_width + x;
                atlas.tangent[dst] = s.tangent[src];
                atlas.depth[dst] = s.depth[src];
                atlas.alpha[dst] = s.alpha[src];
                atlas.ao[dst] = s.ao[src];
            }
        }
    }
    Ok(atlas)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn save_gray(values: &[f64], w: usize, h: usize, path: &Path) -> Result<(), BakeError> {
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(values[y as usize * w + x as usize])]));
    img.save(path)?;
    Ok(())
}

impl TextureAtlas {
    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn height(&self) -> usize {
        self.layout.height()
    }

    /// Writes `atlas_tangent.png`, `atlas_depth.png`, `atlas_alpha.png` and
    /// `atlas_ao.png` into `dir`.
    pub fn save_pngs(&self, dir: &Path, depth_16bit: bool) -> Result<(), BakeError> {
        let (w, h) = (self.width(), self.height());
        let tangent = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let t = self.tangent[y as usize * w + x as usize];
            Rgb([to_u8(t[0]), to_u8(t[1]), to_u8(t[2])])
        });
        tangent.save(dir.join("atlas_tangent.png"))?;
        if depth_16bit {
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u16(self.depth[y as usize * w + x as usize])]));
            img.save(dir.join("atlas_depth.png"))?;
        } else {
            save_gray(&self.depth, w, h, &dir.join("atlas_depth.png"))?;
        }
        save_gray(&self.alpha, w, h, &dir.join("atlas_alpha.png"))?;
        save_gray(&self.ao, w, h, &dir.join("atlas_ao.png"))?;
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CARDS_OBJ: &str = "cards.obj";

/// Writes the card OBJ (uv remapped into each card's slot) and the manifest.
pub fn export_cards(model: &CardModel, atlas: &TextureAtlas, dir: &Path) -> Result<(), BakeError> {
    let layout = atlas.layout;
    let mut obj = std::io::BufWriter::new(std::fs::File::create(dir.join(CARDS_OBJ))?);
    writeln!(obj, "# hair cards: {} cards, {} textures", model.cards.len(), model.textures.len())?;
    let mut base = 1;
    for (ci, card) in model.cards.iter().enumerate() {
        let g = &card.geometry;
        writeln!(obj, "o card_{ci}_cluster_{}", card.cluster)?;
        for v in &g.vertices {
            writeln!(obj, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for uv in &g.uv_layout {
            let a = layout.atlas_uv(card.texture, *uv);
            // OBJ texture space has its origin at the bottom-left.
            writeln!(obj, "vt {} {}", a.x, 1.0 - a.y)?;
        }
        for t in &g.triangles {
            let [a, b, c] = t.map(|i| i + base);
            writeln!(obj, "f {a}/{a} {b}/{b} {c}/{c}")?;
        }
        base += g.vertices.len();
    }
    obj.flush()?;

    let mut m = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
    writeln!(
        m,
        "# atlas {}x{}, {} rows x {} cols of {}x{} slots",
        layout.width(),
        layout.height(),
        layout.rows,
        layout.cols,
        layout.slot_width,
        layout.slot_height
    )?;
    writeln!(m, "# slot texel x follows card v (root to tip), texel y follows card u")?;
    writeln!(m, "# tangent: card frame (across, along, normal), encoded (t+1)/2")?;
    writeln!(m, "# depth: z/(2*z_max)+0.5; alpha: coverage; ao: unoccluded fraction, 1 where alpha=0")?;
    writeln!(m, "# card_id slot_row slot_col z_max crossed")?;
    for (ci, card) in model.cards.iter().enumerate() {
        let (row, col) = layout.slot_position(card.texture);
        let z_max = atlas.slot_z_max.get(card.texture).copied().unwrap_or(0.0);
        writeln!(m, "{ci} {row} {col} {z_max:e} {}", card.crossed as u8)?;
    }
    m.flush()?;
    Ok(())
}

/// One manifest line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifestEntry {
    pub card: usize,
    pub slot_row: usize,
    pub slot_col: usize,
    pub z_max: f64,
    pub crossed: bool,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, BakeError> {
    let text = std::fs::read_to_string(path)?;
    let bad = |l: &str| BakeError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad manifest line {l:?}")));
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            Ok(ManifestEntry {
                card: f[0].parse().map_err(|_| bad(l))?,
                slot_row: f[1].parse().map_err(|_| bad(l))?,
                slot_col: f[2].parse().map_err(|_| bad(l))?,
                z_max: f[3].parse().map_err(|_| bad(l))?,
                crossed: f[4] == "1",
            })
        })
        .collect()
}
