//! Spatial-pyramid linear baseline, score fusion and average precision.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{normalize_sqrt_l1, FeatureTensor, RegionFeature};
use crate::image_io::Label;
use crate::training::{compute_rates, TrainConfig};
use crate::{Error, Result};

/// Pyramid levels `c x c` for `c = 1..=4`: 30 cells.
pub const DEFAULT_SPM_LEVELS: [usize; 4] = [1, 2, 3, 4];

/// Scores paired with ground-truth labels, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResults {
    pub items: Vec<(f64, Label)>,
}

impl RankedResults {
    pub fn new(scores: &[f64], labels: &[Label]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: labels.len(), found: scores.len() });
        }
        Ok(Self { items: scores.iter().copied().zip(labels.iter().copied()).collect() })
    }
}

/// Non-interpolated average precision: the mean, over positives, of the
/// precision at each positive's rank. Scores are ranked descending; equal
/// scores keep their input order.
pub fn average_precision(results: &RankedResults) -> Result<f64> {
    let mut order: Vec<usize> = (0..results.items.len()).collect();
    order.sort_by(|&a, &b| results.items[b].0.total_cmp(&results.items[a].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if results.items[i].1.is_positive() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sum / hits as f64)
}

pub fn mean_ap(per_class: &[f64]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Late fusion with a full-image classifier: the scores are added.
#[inline]
pub fn fuse_scores(a: f64, b: f64) -> f64 {
    a + b
}

/// Dimension of [`spm_feature`] for the given levels.
pub fn spm_dim(levels: &[usize], d: usize) -> usize {
    levels.iter().map(|c| c * c).sum::<usize>() * d + 1
}

/// Spatial-pyramid vector read off the integral tensor.
///
/// For each level `c` the image is split into `c x c` cells (row-major);
/// every cell histogram is sqrt-L1 normalized like a region feature. A single
/// `-1` bias slot closes the vector. Every `c` must divide the grid's cell
/// counts.
pub fn spm_feature(tensor: &FeatureTensor, levels: &[usize]) -> Result<Vec<f64>> {
    let grid = tensor.grid();
    let (cx, cy) = (grid.cells_x(), grid.cells_y());
    if let Some(&c) = levels.iter().find(|&&c| c == 0 || cx % c != 0 || cy % c != 0) {
        return Err(Error::InvalidGrid(format!("{cx}x{cy} cells cannot be split into a {c}x{c} pyramid level")));
    }
    let d = tensor.d();
    let mut out = Vec::with_capacity(spm_dim(levels, d));
    let mut hist = vec![0.0; d];
    for &c in levels {
        let (sx, sy) = (cx / c, cy / c);
        for row in 0..c {
            for col in 0..c {
                tensor.raw_histogram_into([col * sx, row * sy, (col + 1) * sx, (row + 1) * sy], &mut hist);
                normalize_sqrt_l1(&mut hist);
                out.extend_from_slice(&hist);
            }
        }
    }
    out.push(RegionFeature::BIAS);
    Ok(out)
}

#[inline]
pub fn linear_score(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Hinge-loss SGD for a linear scorer, with the same asymmetric rates,
/// pass structure and annealing as the part-model trainer.
pub fn train_linear(vectors: &[Vec<f64>], labels: &[Label], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), found: vectors.len() });
    }
    let m_pos = labels.iter().filter(|l| l.is_positive()).count();
    let m_neg = labels.len() - m_pos;
    if m_pos == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    if m_neg == 0 {
        return Err(Error::EmptyClass("negative"));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = vec![0.0; dim];
    let mut eta0 = cfg.eta0;
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    for iter in 1..=cfg.outer_iters {
        let (eta_pos, eta_neg) = compute_rates(eta0, m_pos, m_neg);
        for _ in 0..cfg.passes_per_iter {
            order.shuffle(&mut rng);
            for &i in &order {
                let y = labels[i].sign();
                let eta = if labels[i].is_positive() { eta_pos } else { eta_neg };
                let violated = y * linear_score(&w, &vectors[i]) < 1.0;
                let shrink = (1.0 - eta * cfg.lambda).max(0.0);
                for (wj, xj) in w.iter_mut().zip(&vectors[i]) {
                    *wj *= shrink;
                    if violated {
                        *wj += y * eta * xj;
                    }
                }
            }
        }
        if iter == cfg.anneal_at {
            eta0 /= cfg.anneal_factor;
        }
    }
    Ok(w)
}
