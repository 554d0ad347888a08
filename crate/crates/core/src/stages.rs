//! Library-level pipeline steps shared by the CLI and the tests.

use rayon::prelude::*;
use thiserror::Error;

use crate::cardgeom::{fit_cluster, CardError, FittedCard};
use crate::cluster::Clustering;
use crate::hairio::HairModel;
use crate::model::{CardInstance, CardModel};
use crate::softrender::{rasterize, strand_ribbons, ChannelImages, ViewCamera};
use crate::texreduce::TextureAssignment;
use crate::texspace::{project_cluster, project_crossed, CardTexture, TexError};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Card(#[from] CardError),
    #[error(transparent)]
    Texture(#[from] TexError),
    #[error("assignment covers {assigned} cards but the model has {cards}")]
    AssignmentSize { assigned: usize, cards: usize },
}

/// Renders the strand model as ribbons of a shared width.
pub fn reference_renders(hair: &HairModel, views: &[ViewCamera], width: f64) -> Vec<ChannelImages> {
    let ribbons = strand_ribbons(hair.strands.iter().map(|s| s.samples.as_slice()), width);
    views.par_iter().map(|cam| rasterize(&ribbons, cam).0).collect()
}

/// Card fitting parameters.
#[derive(Debug, Clone, Copy)]
pub struct FitParams {
    pub n_quads: usize,
    pub n_circle_samples: usize,
    pub min_width: f64,
    pub crossed: bool,
    pub strand_width: f64,
}

/// Fits every cluster's card, or crossed pair of cards.
pub fn fit_all(hair: &HairModel, clustering: &Clustering, p: &FitParams) -> Result<Vec<Vec<FittedCard>>, StageError> {
    Ok(clustering
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| fit_cluster(i, c, hair, p.n_quads, p.n_circle_samples, p.min_width, p.crossed))
        .collect::<Result<_, _>>()?)
}

/// Projects each cluster's members onto its fitted card(s); every card
/// gets its own texture.
pub fn project_all(
    hair: &HairModel,
    clustering: &Clustering,
    fitted: &[Vec<FittedCard>],
    strand_width: f64,
) -> Result<CardModel, StageError> {
    let mut model = CardModel {
        cards: Vec::new(),
        textures: Vec::new(),
    };
    for (ci, cards) in fitted.iter().enumerate() {
        let cluster = &clustering.clusters[ci];
        let textures: Vec<CardTexture> = if cards.len() == 2 {
            let (a, b) = project_crossed(cluster, &cards[0].geometry, &cards[1].geometry, hair, strand_width)?;
            vec![a, b]
        } else {
            vec![project_cluster(cluster, &cards[0].geometry, hair, strand_width)?]
        };
        for (card, tex) in cards.iter().zip(textures) {
            model.cards.push(CardInstance {
                geometry: card.geometry.clone(),
                texture: model.textures.len(),
                cluster: ci,
                crossed: card.crossed,
            });
            model.textures.push(tex);
        }
    }
    Ok(model)
}

/// [`fit_all`] followed by [`project_all`].
pub fn initial_model(
    hair: &HairModel,
    clustering: &Clustering,
    p: &FitParams,
) -> Result<(CardModel, Vec<FittedCard>), StageError> {
    let fitted = fit_all(hair, clustering, p)?;
    let model = project_all(hair, clustering, &fitted, p.strand_width)?;
    Ok((model, fitted.into_iter().flatten().collect()))
}

/// Keeps only each group's representative texture and points every card at
/// its group's texture. Expects one texture per card, in card order.
pub fn apply_assignment(model: &CardModel, a: &TextureAssignment) -> Result<CardModel, StageError> {
    if a.group_of.len() != model.cards.len() {
        return Err(StageError::AssignmentSize {
            assigned: a.group_of.len(),
            cards: model.cards.len(),
        });
    }
    let textures = a
        .representative
        .iter()
        .map(|&r| model.textures[model.cards[r].texture].clone())
        .collect();
    let cards = model
        .cards
        .iter()
        .zip(&a.group_of)
        .map(|(c, &g)| CardInstance {
            texture: g,
            ..c.clone()
        })
        .collect();
    Ok(CardModel { cards, textures })
}
