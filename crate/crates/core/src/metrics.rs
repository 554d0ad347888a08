//! Image metrics between strand (reference) and card renders.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hairio::HairModel;
use crate::model::CardModel;
use crate::softrender::{rasterize, sample_views, Channel, ChannelImages, RenderError, ViewCamera};
use crate::stages::reference_renders;
use crate::texreduce::{PerceptualMetric, ReduceError, RgbImage};

/// Reported ceiling for PSNR (identical images give infinity).
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("resolution mismatch: {0} vs {1} values")]
    SizeMismatch(usize, usize),
    #[error("{0} reference renders but {1} candidate renders")]
    ViewCountMismatch(usize, usize),
    #[error(transparent)]
    Perceptual(#[from] ReduceError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::SizeMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// 10 log10(1 / MSE) for values in [0, 1]; infinite when the images agree.
pub fn psnr(reference: &[f64], image: &[f64]) -> Result<f64, MetricError> {
    same_len(reference, image)?;
    let mse = reference.iter().zip(image).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / reference.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn binary(v: f64) -> bool {
    v >= 0.5
}

/// Fraction of pixels where the masks, thresholded at 0.5, disagree.
pub fn coverage_error(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    same_len(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.iter().zip(b).filter(|(x, y)| binary(**x) != binary(**y)).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Dice coefficient of thresholded masks; two empty masks count as equal.
pub fn dice_coefficient(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    same_len(a, b)?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (binary(*x), binary(*y));
        both += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 })
}

fn tangent_image(img: &ChannelImages) -> RgbImage {
    RgbImage {
        width: img.resolution,
        height: img.resolution,
        data: img.tangent.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    /// Tangent-channel PSNR, capped at [`PSNR_CAP`].
    pub psnr: f64,
    /// Patch-statistics distance on the tangent channel.
    pub perceptual: f64,
    pub coverage_error: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean: ViewMetrics,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let avg = |f: fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
        let mean = ViewMetrics {
            psnr: avg(|v| v.psnr),
            perceptual: avg(|v| v.perceptual),
            coverage_error: avg(|v| v.coverage_error),
            dice: avg(|v| v.dice),
        };
        Self { views, mean }
    }

    pub fn to_json(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn compare_view(reference: &ChannelImages, candidate: &ChannelImages, metric: &dyn PerceptualMetric) -> Result<ViewMetrics, MetricError> {
    Ok(ViewMetrics {
        psnr: psnr(&reference.tangent, &candidate.tangent)?.min(PSNR_CAP),
        perceptual: metric.distance(&tangent_image(reference), &tangent_image(candidate))?,
        coverage_error: coverage_error(&reference.mask, &candidate.mask)?,
        dice: dice_coefficient(&reference.mask, &candidate.mask)?,
    })
}

/// Per-view metrics of `candidates` against `references`, view by view.
pub fn evaluate_renders(
    references: &[ChannelImages],
    candidates: &[ChannelImages],
    metric: &dyn PerceptualMetric,
) -> Result<EvalReport, MetricError> {
    if references.len() != candidates.len() {
        return Err(MetricError::ViewCountMismatch(references.len(), candidates.len()));
    }
    let views = references
        .par_iter()
        .zip(candidates)
        .map(|(r, c)| compare_view(r, c, metric))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_views(views))
}

pub fn render_cards(model: &CardModel, views: &[ViewCamera]) -> Vec<ChannelImages> {
    let ribbons = model.ribbons(&model.lift_all());
    views.par_iter().map(|cam| rasterize(&ribbons, cam).0).collect()
}

/// Evaluation renders: reference strand renders and card renders per view.
pub struct EvalRenders {
    pub references: Vec<ChannelImages>,
    pub cards: Vec<ChannelImages>,
}

impl EvalRenders {
    /// Writes `view_XX_{strands,cards}_{tangent,mask}.png` pairs.
    pub fn save_pngs(&self, dir: &Path) -> Result<(), MetricError> {
        for (i, (r, c)) in self.references.iter().zip(&self.cards).enumerate() {
            for (name, img) in [("strands", r), ("cards", c)] {
                img.save_png(Channel::Tangent, &dir.join(format!("view_{i:02}_{name}_tangent.png")))?;
                img.save_png(Channel::Mask, &dir.join(format!("view_{i:02}_{name}_mask.png")))?;
            }
        }
        Ok(())
    }
}

/// Renders the strand model and the card model from `n_views` views around
/// the strands and compares them.
pub fn evaluate(
    model: &CardModel,
    hair: &HairModel,
    n_views: usize,
    resolution: usize,
    strand_width: f64,
    metric: &dyn PerceptualMetric,
) -> Result<(EvalReport, EvalRenders), MetricError> {
    let views = sample_views(n_views, &hair.bounds, resolution);
    let renders = EvalRenders {
        references: reference_renders(hair, &views, strand_width),
        cards: render_cards(model, &views),
    };
    let report = evaluate_renders(&renders.references, &renders.cards, metric)?;
    Ok((report, renders))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = vec![0.3; 16];
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let z = vec![0.0; 16];
        let h = vec![0.5; 16];
        assert!((psnr(&z, &h).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!(psnr(&z, &h[..4]).is_err());
    }

    #[test]
    fn coverage_and_dice_cases() {
        let a: Vec<f64> = (0..100).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect();
        let empty = vec![0.0; 100];
        assert_eq!(coverage_error(&a, &a).unwrap(), 0.0);
        assert_eq!(coverage_error(&a, &empty).unwrap(), 0.1);
        let comp: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
        assert_eq!(coverage_error(&a, &comp).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &comp).unwrap(), 0.0);
        assert_eq!(dice_coefficient(&empty, &empty).unwrap(), 1.0);
    }
}
