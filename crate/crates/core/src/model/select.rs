use itertools::Itertools;

use super::{EpmModel, ImageId};
use crate::features::FeatureTensor;
use crate::geometry::{iou, PartLocation};
use crate::{Error, Result};

/// Largest model [`score_exact`] will enumerate.
pub const EXACT_MAX_PARTS: usize = 20;

/// Parts picked to score one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Indices into the model's parts, in pick order.
    pub chosen: Vec<usize>,
    /// Score of each chosen part, aligned with `chosen`.
    pub part_scores: Vec<f64>,
    /// Mean of `part_scores`; 0 for an empty selection.
    pub score: f64,
}

impl Selection {
    fn from_chosen(chosen: Vec<usize>, scores: &[f64]) -> Self {
        let part_scores: Vec<f64> = chosen.iter().map(|&i| scores[i]).collect();
        let score =
            if part_scores.is_empty() { 0.0 } else { part_scores.iter().sum::<f64>() / part_scores.len() as f64 };
        Self { chosen, part_scores, score }
    }

    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }
}

/// What the selection step needs to know about one part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub location: PartLocation,
    pub source: ImageId,
    pub score: f64,
}

/// Greedy constrained selection.
///
/// Repeatedly takes the best-scoring remaining candidate (lowest index on
/// ties) whose IoU with every pick so far is at most `beta`, whose source is
/// not in `excluded`, and, with `unique_sources`, whose source differs from
/// every earlier pick. Stops after `k` picks or when nothing feasible is
/// left. A candidate that becomes infeasible never becomes feasible again, so
/// one pass down the sorted order is enough.
pub fn greedy_select(
    candidates: &[Candidate],
    k: usize,
    beta: f64,
    excluded: &[ImageId],
    unique_sources: bool,
) -> Result<Selection> {
    let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| !excluded.contains(&candidates[i].source)).collect();
    if order.is_empty() {
        return Err(Error::EmptySelection);
    }
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score).then(a.cmp(&b)));

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for i in order {
        if chosen.len() == k {
            break;
        }
        let c = &candidates[i];
        let clashes = chosen.iter().any(|&j| {
            let other = &candidates[j];
            (unique_sources && other.source == c.source) || iou(&other.location, &c.location) > beta
        });
        if !clashes {
            chosen.push(i);
        }
    }
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    Ok(Selection::from_chosen(chosen, &scores))
}

/// Exhaustive search for the overlap-feasible subset of exactly
/// `cardinality` candidates with the highest mean score. Among equal means
/// the lexicographically first index set wins.
pub fn exact_select(candidates: &[Candidate], cardinality: usize, beta: f64) -> Result<Selection> {
    let n = candidates.len();
    if n > EXACT_MAX_PARTS {
        return Err(Error::TooManyParts(n));
    }
    if cardinality == 0 || cardinality > n {
        return Err(Error::Infeasible(cardinality));
    }
    let compatible: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| iou(&candidates[i].location, &candidates[j].location) <= beta).collect())
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for combo in (0..n).combinations(cardinality) {
        let feasible = combo.iter().tuple_combinations().all(|(&a, &b)| compatible[a][b]);
        if !feasible {
            continue;
        }
        let mean = combo.iter().map(|&i| candidates[i].score).sum::<f64>() / cardinality as f64;
        if best.as_ref().is_none_or(|(m, _)| mean > *m) {
            best = Some((mean, combo));
        }
    }
    let (_, chosen) = best.ok_or(Error::Infeasible(cardinality))?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    Ok(Selection::from_chosen(chosen, &scores))
}

fn candidates(model: &EpmModel, tensor: &FeatureTensor) -> Result<Vec<Candidate>> {
    let scores = model.part_scores(tensor)?;
    Ok(model
        .parts
        .iter()
        .zip(scores)
        .map(|(p, score)| Candidate { location: p.location, source: p.source, score })
        .collect())
}

/// Scores an image with up to `k` parts chosen by [`greedy_select`].
///
/// During training, `excluded` holds the image's own id and `unique_sources`
/// forbids two picks from the same source image. At test time both are off.
pub fn score_greedy(
    model: &EpmModel,
    tensor: &FeatureTensor,
    excluded: &[ImageId],
    unique_sources: bool,
) -> Result<Selection> {
    greedy_select(&candidates(model, tensor)?, model.k(), model.beta(), excluded, unique_sources)
}

/// Exact maximizer over overlap-feasible subsets of `cardinality` parts.
pub fn score_exact(model: &EpmModel, tensor: &FeatureTensor, cardinality: usize) -> Result<Selection> {
    if model.len() > EXACT_MAX_PARTS {
        return Err(Error::TooManyParts(model.len()));
    }
    exact_select(&candidates(model, tensor)?, cardinality, model.beta())
}
