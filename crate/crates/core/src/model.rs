//! A card model: card instances, the textures they reference, and the
//! plumbing between texture space and the rasterizer.

use serde::{Deserialize, Serialize};

use crate::cardgeom::CardGeometry;
use crate::math::{Vec2, Vec3};
use crate::softrender::{Ribbon, RibbonGrads};
use crate::texspace::{reconstruct_point, reconstruct_point_backward, CardTexture, ChartLocation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardInstance {
    pub geometry: CardGeometry,
    /// Index into [`CardModel::textures`].
    pub texture: usize,
    pub cluster: usize,
    pub crossed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardModel {
    pub cards: Vec<CardInstance>,
    pub textures: Vec<CardTexture>,
}

/// Strands of one texture lifted onto one card.
#[derive(Debug, Clone)]
pub struct LiftedCard {
    pub strands: Vec<Vec<Vec3>>,
    pub locations: Vec<Vec<ChartLocation>>,
}

/// Gradients with the same layout as the model's free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    /// Per card, per rail vertex.
    pub vertices: Vec<Vec<Vec3>>,
    /// Per texture, per strand, per sample.
    pub uv: Vec<Vec<Vec<Vec2>>>,
    pub tangents: Vec<Vec<Vec<Vec3>>>,
    /// Per texture, per strand.
    pub widths: Vec<Vec<f64>>,
}

impl ModelGrads {
    pub fn zeros(model: &CardModel) -> Self {
        Self {
            vertices: model.cards.iter().map(|c| vec![Vec3::zeros(); c.geometry.vertices.len()]).collect(),
            uv: model
                .textures
                .iter()
                .map(|t| t.strands.iter().map(|s| vec![Vec2::zeros(); s.len()]).collect())
                .collect(),
            tangents: model
                .textures
                .iter()
                .map(|t| t.strands.iter().map(|s| vec![Vec3::zeros(); s.len()]).collect())
                .collect(),
            widths: model.textures.iter().map(|t| vec![0.0; t.strands.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, k: f64) {
        for (a, b) in self.vertices.iter_mut().zip(&other.vertices) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * k;
            }
        }
        for (a, b) in self.uv.iter_mut().zip(&other.uv) {
            for (sa, sb) in a.iter_mut().zip(b) {
                for (x, y) in sa.iter_mut().zip(sb) {
                    *x += y * k;
                }
            }
        }
        for (a, b) in self.tangents.iter_mut().zip(&other.tangents) {
            for (sa, sb) in a.iter_mut().zip(b) {
                for (x, y) in sa.iter_mut().zip(sb) {
                    *x += y * k;
                }
            }
        }
        for (a, b) in self.widths.iter_mut().zip(&other.widths) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * k;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.vertices.iter_mut().flatten().for_each(|v| *v *= k);
        self.uv.iter_mut().flatten().flatten().for_each(|v| *v *= k);
        self.tangents.iter_mut().flatten().flatten().for_each(|v| *v *= k);
        self.widths.iter_mut().flatten().for_each(|v| *v *= k);
    }

    /// All entries in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.vertices {
            for v in c {
                out.extend(v.iter());
            }
        }
        for t in &self.uv {
            for s in t {
                for v in s {
                    out.extend(v.iter());
                }
            }
        }
        for t in &self.tangents {
            for s in t {
                for v in s {
                    out.extend(v.iter());
                }
            }
        }
        for t in &self.widths {
            out.extend(t.iter());
        }
        out
    }

    pub fn has_non_finite(&self) -> bool {
        self.flatten().iter().any(|x| !x.is_finite())
    }
}

impl CardModel {
    pub fn lift(&self, card: usize) -> LiftedCard {
        let inst = &self.cards[card];
        let tex = &self.textures[inst.texture];
        let mut strands = Vec::with_capacity(tex.strands.len());
        let mut locations = Vec::with_capacity(tex.strands.len());
        for s in &tex.strands {
            let (pts, locs): (Vec<Vec3>, Vec<ChartLocation>) = s
                .uv
                .iter()
                .zip(&s.z)
                .map(|(uv, z)| reconstruct_point(&inst.geometry, *uv, *z))
                .unzip();
            strands.push(pts);
            locations.push(locs);
        }
        LiftedCard { strands, locations }
    }

    pub fn lift_all(&self) -> Vec<LiftedCard> {
        (0..self.cards.len()).map(|c| self.lift(c)).collect()
    }

    /// One ribbon per (card, texture strand), in card-major order.
    pub fn ribbons(&self, lifted: &[LiftedCard]) -> Vec<Ribbon> {
        let mut out = Vec::new();
        for (c, inst) in self.cards.iter().enumerate() {
            let tex = &self.textures[inst.texture];
            for (s, pts) in tex.strands.iter().zip(&lifted[c].strands) {
                out.push(Ribbon {
                    points: pts.clone(),
                    tangents: s.tangents.clone(),
                    width: s.width,
                });
            }
        }
        out
    }

    /// Pulls ribbon gradients (from [`Self::ribbons`]) back to the model.
    pub fn backprop_ribbons(&self, lifted: &[LiftedCard], ribbon_grads: &[RibbonGrads], out: &mut ModelGrads) {
        let mut r = 0;
        for (c, inst) in self.cards.iter().enumerate() {
            let tex = &self.textures[inst.texture];
            for (si, s) in tex.strands.iter().enumerate() {
                let g = &ribbon_grads[r];
                r += 1;
                self.backprop_points(c, si, &lifted[c].locations[si], &g.points, out);
                for (acc, gt) in out.tangents[inst.texture][si].iter_mut().zip(&g.tangents) {
                    *acc += gt;
                }
                out.widths[inst.texture][si] += g.width;
                debug_assert_eq!(s.len(), g.points.len());
            }
        }
    }

    /// Pulls gradients on the lifted points of one strand back to rails and uv.
    pub fn backprop_points(
        &self,
        card: usize,
        strand: usize,
        locations: &[ChartLocation],
        g_points: &[Vec3],
        out: &mut ModelGrads,
    ) {
        let inst = &self.cards[card];
        let s = &self.textures[inst.texture].strands[strand];
        for (j, (loc, g)) in locations.iter().zip(g_points).enumerate() {
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let g_uv = reconstruct_point_backward(&inst.geometry, loc, s.z[j], g, &mut out.vertices[card]);
            out.uv[inst.texture][strand][j] += g_uv;
        }
    }

    /// Every rail vertex of every card.
    pub fn rail_points(&self) -> impl Iterator<Item = (usize, usize, &Vec3)> {
        self.cards
            .iter()
            .enumerate()
            .flat_map(|(c, inst)| inst.geometry.vertices.iter().enumerate().map(move |(v, p)| (c, v, p)))
    }

    /// Number of cards using each texture.
    pub fn instance_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.textures.len()];
        for c in &self.cards {
            counts[c.texture] += 1;
        }
        counts
    }
}
