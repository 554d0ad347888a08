//! Objective terms: per-channel MSE and soft Dice between renders, tangent
//! consistency against lifted geometry, and a head-collision penalty.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;
use crate::model::{CardModel, ModelGrads};
use crate::softrender::{rasterize, rasterize_backward, Channel, ChannelImages, RenderError, ViewCamera};
use crate::texspace::CardTexture;

pub use crate::sdf::MeshSdf;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),
    #[error("{views} views but {references} reference renders")]
    ViewCount { views: usize, references: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tangent: f64,
    pub depth: f64,
    pub dice: f64,
    pub matching: f64,
    pub collision: f64,
}

impl LossWeights {
    pub fn straight() -> Self {
        Self {
            tangent: 10.0,
            depth: 10.0,
            dice: 5.0,
            matching: 3.0,
            collision: 1e5,
        }
    }

    pub fn curly() -> Self {
        Self {
            tangent: 5.0,
            depth: 15.0,
            dice: 3.0,
            matching: 3.0,
            collision: 1e5,
        }
    }

    pub fn zero() -> Self {
        Self {
            tangent: 0.0,
            depth: 0.0,
            dice: 0.0,
            matching: 0.0,
            collision: 0.0,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            tangent: self.tangent * k,
            depth: self.depth * k,
            dice: self.dice * k,
            matching: self.matching * k,
            collision: self.collision * k,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.tangent, self.depth, self.dice, self.matching, self.collision]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite())
    }
}

/// How the tangent-match sum enters the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchNorm {
    /// Divided by the number of lifted samples, putting it on the same
    /// per-element footing as the image means.
    #[default]
    PerSample,
    /// The raw sum over samples.
    Sum,
}

fn check_resolution(a: &ChannelImages, b: &ChannelImages) -> Result<(), LossError> {
    if a.resolution != b.resolution {
        return Err(LossError::ResolutionMismatch(a.resolution, b.resolution));
    }
    Ok(())
}

/// Mean squared difference over one channel, with its gradient with respect
/// to `rendered`.
pub fn channel_mse_with_grad(
    rendered: &ChannelImages,
    reference: &ChannelImages,
    channel: Channel,
) -> Result<(f64, Vec<f64>), LossError> {
    check_resolution(rendered, reference)?;
    let a = rendered.channel(channel);
    let b = reference.channel(channel);
    let n = a.len() as f64;
    let mut sum = 0.0;
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, grad))
}

pub fn channel_mse(rendered: &ChannelImages, reference: &ChannelImages, channel: Channel) -> Result<f64, LossError> {
    channel_mse_with_grad(rendered, reference, channel).map(|(v, _)| v)
}

/// Soft Dice loss `1 - 2 sum(AB) / (sum(A) + sum(B))` and its gradient with
/// respect to `a`. Two empty masks give 0.
pub fn dice_loss_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let inter: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let total: f64 = a.iter().sum::<f64>() + b.iter().sum::<f64>();
    if total == 0.0 {
        return (0.0, vec![0.0; a.len()]);
    }
    let value = 1.0 - 2.0 * inter / total;
    let grad = b
        .iter()
        .map(|y| -2.0 * (y * total - inter) / (total * total))
        .collect();
    (value, grad)
}

pub fn dice_loss(a: &[f64], b: &[f64]) -> f64 {
    dice_loss_with_grad(a, b).0
}

/// Match loss of one card instance with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTerm {
    pub value: f64,
    /// Per strand, per sample.
    pub g_tangents: Vec<Vec<Vec3>>,
    pub g_points: Vec<Vec<Vec3>>,
}

/// `sum ||t - normalize(x[j+1] - x[j])||^2`, the last sample reusing the
/// previous difference. Zero-length segments are skipped.
pub fn match_loss_with_grad(texture: &CardTexture, strands: &[Vec<Vec3>]) -> MatchTerm {
    let mut value = 0.0;
    let mut g_tangents = Vec::with_capacity(strands.len());
    let mut g_points = Vec::with_capacity(strands.len());
    let mut skipped = 0usize;
    for (s, pts) in texture.strands.iter().zip(strands) {
        let n = pts.len();
        let mut gt = vec![Vec3::zeros(); n];
        let mut gp = vec![Vec3::zeros(); n];
        for j in 0..n {
            if n < 2 {
                break;
            }
            let k = j.min(n - 2);
            let d = pts[k + 1] - pts[k];
            let len = d.norm();
            if !(len > 0.0) {
                skipped += 1;
                continue;
            }
            let dh = d / len;
            let r = s.tangents[j] - dh;
            value += r.norm_squared();
            gt[j] = r * 2.0;
            let g_dh = -r * 2.0;
            let g_d = (g_dh - dh * dh.dot(&g_dh)) / len;
            gp[k + 1] += g_d;
            gp[k] -= g_d;
        }
        g_tangents.push(gt);
        g_points.push(gp);
    }
    if skipped > 0 {
        warn!("match loss skipped {skipped} zero-length segments");
    }
    MatchTerm {
        value,
        g_tangents,
        g_points,
    }
}

pub fn match_loss(texture: &CardTexture, strands: &[Vec<Vec3>]) -> f64 {
    match_loss_with_grad(texture, strands).value
}

/// `sum min(0, sdf(p))^2` over the given points, with per-point gradients.
pub fn collision_loss_with_grad(points: &[Vec3], sdf: &MeshSdf) -> (f64, Vec<Vec3>) {
    let mut value = 0.0;
    let grads = points
        .iter()
        .map(|p| {
            let s = sdf.sample(p);
            if s.value < 0.0 {
                value += s.value * s.value;
                s.gradient * (2.0 * s.value)
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    (value, grads)
}

pub fn collision_loss(points: &[Vec3], sdf: &MeshSdf) -> f64 {
    collision_loss_with_grad(points, sdf).0
}

/// Unweighted values of every term (match after its normalization).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tangent: f64,
    pub depth: f64,
    pub dice: f64,
    pub matching: f64,
    pub collision: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.tangent * self.tangent
            + w.depth * self.depth
            + w.dice * self.dice
            + w.matching * self.matching
            + w.collision * self.collision
    }
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossBreakdown,
    pub grads: ModelGrads,
}

/// Visual terms for one view: rendered vs reference, with model gradients
/// already scaled by the given weights.
fn view_terms(
    model: &CardModel,
    lifted: &[crate::model::LiftedCard],
    camera: &ViewCamera,
    reference: &ChannelImages,
    weights: &LossWeights,
    scale: f64,
) -> Result<(LossBreakdown, ModelGrads), LossError> {
    let ribbons = model.ribbons(lifted);
    let (img, record) = rasterize(&ribbons, camera);
    check_resolution(&img, reference)?;
    let (lt, gt) = channel_mse_with_grad(&img, reference, Channel::Tangent)?;
    let (ld, gd) = channel_mse_with_grad(&img, reference, Channel::Depth)?;
    let (lm, gm) = dice_loss_with_grad(&img.mask, &reference.mask);
    let mut g = ChannelImages::zeros(img.resolution);
    g.tangent = gt.iter().map(|x| x * weights.tangent * scale).collect();
    g.depth = gd.iter().map(|x| x * weights.depth * scale).collect();
    g.mask = gm.iter().map(|x| x * weights.dice * scale).collect();
    let ribbon_grads = rasterize_backward(&ribbons, &record, &g)?;
    let mut grads = ModelGrads::zeros(model);
    model.backprop_ribbons(lifted, &ribbon_grads, &mut grads);
    Ok((
        LossBreakdown {
            tangent: lt,
            depth: ld,
            dice: lm,
            ..Default::default()
        },
        grads,
    ))
}

/// Weighted objective over the supplied views (visual terms averaged) plus
/// the geometric terms, with gradients for every free parameter.
pub fn total_loss(
    model: &CardModel,
    views: &[ViewCamera],
    references: &[ChannelImages],
    weights: &LossWeights,
    sdf: Option<&MeshSdf>,
    match_norm: MatchNorm,
) -> Result<TotalLoss, LossError> {
    if views.len() != references.len() {
        return Err(LossError::ViewCount {
            views: views.len(),
            references: references.len(),
        });
    }
    let lifted = model.lift_all();
    let mut grads = ModelGrads::zeros(model);
    let mut terms = LossBreakdown::default();

    if !views.is_empty() {
        let scale = 1.0 / views.len() as f64;
        let per_view: Vec<(LossBreakdown, ModelGrads)> = views
            .par_iter()
            .zip(references.par_iter())
            .map(|(cam, reference)| view_terms(model, &lifted, cam, reference, weights, scale))
            .collect::<Result<_, _>>()?;
        // Fixed reduction order keeps results bit-identical across thread counts.
        for (t, g) in &per_view {
            terms.tangent += t.tangent * scale;
            terms.depth += t.depth * scale;
            terms.dice += t.dice * scale;
            grads.add_scaled(g, 1.0);
        }
    }

    let samples: usize = lifted.iter().flat_map(|l| l.strands.iter()).map(Vec::len).sum();
    let match_scale = match match_norm {
        MatchNorm::Sum => 1.0,
        MatchNorm::PerSample => 1.0 / samples.max(1) as f64,
    };
    let wm = weights.matching * match_scale;
    for (c, inst) in model.cards.iter().enumerate() {
        let tex = &model.textures[inst.texture];
        let m = match_loss_with_grad(tex, &lifted[c].strands);
        terms.matching += m.value * match_scale;
        for (si, (gt, gp)) in m.g_tangents.iter().zip(&m.g_points).enumerate() {
            for (acc, g) in grads.tangents[inst.texture][si].iter_mut().zip(gt) {
                *acc += g * wm;
            }
            let scaled: Vec<Vec3> = gp.iter().map(|g| g * wm).collect();
            model.backprop_points(c, si, &lifted[c].locations[si], &scaled, &mut grads);
        }
    }

    if let Some(sdf) = sdf {
        for (c, inst) in model.cards.iter().enumerate() {
            let (v, g) = collision_loss_with_grad(&inst.geometry.vertices, sdf);
            terms.collision += v;
            for (acc, gi) in grads.vertices[c].iter_mut().zip(&g) {
                *acc += gi * weights.collision;
            }
        }
    }

    Ok(TotalLoss {
        value: terms.weighted_total(weights),
        terms,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_identities() {
        let a = vec![1.0, 1.0, 0.0, 0.0];
        assert_eq!(dice_loss(&a, &a), 0.0);
        assert_eq!(dice_loss(&a, &[0.0, 0.0, 1.0, 1.0]), 1.0);
        assert_eq!(dice_loss(&[0.0; 4], &[0.0; 4]), 0.0);
        let half = vec![1.0, 0.0, 0.0, 0.0];
        assert!((dice_loss(&a, &half) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_loss(&a, &half), dice_loss(&half, &a));
    }

    #[test]
    fn dice_gradient() {
        let a = vec![0.2, 0.7, 0.1, 0.9];
        let b = vec![0.5, 0.3, 0.0, 1.0];
        let (_, g) = dice_loss_with_grad(&a, &b);
        for i in 0..4 {
            let h = 1e-7;
            let mut ap = a.clone();
            ap[i] += h;
            let mut am = a.clone();
            am[i] -= h;
            let fd = (dice_loss(&ap, &b) - dice_loss(&am, &b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn mse_values() {
        let mut a = ChannelImages::zeros(2);
        let mut b = ChannelImages::zeros(2);
        assert_eq!(channel_mse(&a, &b, Channel::Depth).unwrap(), 0.0);
        b.depth = vec![1.0; 4];
        assert_eq!(channel_mse(&a, &b, Channel::Depth).unwrap(), 1.0);
        a.tangent[0] = 0.5;
        assert!((channel_mse(&a, &b, Channel::Tangent).unwrap() - 0.25 / 12.0).abs() < 1e-15);
        assert!(matches!(
            channel_mse(&a, &ChannelImages::zeros(3), Channel::Mask),
            Err(LossError::ResolutionMismatch(2, 3))
        ));
    }

    #[test]
    fn match_flip_costs_four() {
        let pts: Vec<Vec3> = (0..4).map(|j| Vec3::new(j as f64, 0.0, 0.0)).collect();
        let mut tex = CardTexture {
            strands: vec![crate::texspace::TexStrand {
                source: 0,
                uv: vec![Default::default(); 4],
                z: vec![0.0; 4],
                tangents: vec![Vec3::x(); 4],
                width: 0.1,
            }],
        };
        assert!(match_loss(&tex, &[pts.clone()]) < 1e-10);
        tex.strands[0].tangents[2] = -Vec3::x();
        assert!((match_loss(&tex, &[pts]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn presets() {
        let s = LossWeights::straight();
        assert_eq!([s.tangent, s.depth, s.dice, s.matching, s.collision], [10.0, 10.0, 5.0, 3.0, 1e5]);
        let c = LossWeights::curly();
        assert_eq!([c.tangent, c.depth, c.dice, c.matching, c.collision], [5.0, 15.0, 3.0, 3.0, 1e5]);
    }
}
