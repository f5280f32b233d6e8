//! Glue from image lists to tensors, codebooks and ranked test scores.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eval::{linear_score, spm_feature, train_linear};
use crate::features::{build_feature_tensor, extract_dense_descriptors, learn_codebook, Codebook, FeatureTensor};
use crate::geometry::Grid;
use crate::image_io::{DatasetManifest, GrayImage, Label};
use crate::model::{score_greedy, EpmModel};
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Descriptor, codebook and grid settings shared by every image of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub grid: Grid,
    /// Descriptor lattice spacing in pixels.
    pub step: usize,
    pub patch_sizes: Vec<usize>,
    pub codebook_size: usize,
    /// Descriptors drawn (without replacement) to fit the codebook.
    pub codebook_samples: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            step: 4,
            patch_sizes: vec![8, 16],
            codebook_size: 64,
            codebook_samples: 20_000,
            kmeans_iters: 30,
            seed: 0,
        }
    }
}

/// Loads every manifest entry, cropping boxed entries with `expand_frac`.
pub fn load_images(manifest: &DatasetManifest, expand_frac: f64) -> Result<Vec<GrayImage>> {
    manifest.entries.par_iter().map(|e| manifest.load_entry(e, expand_frac)).collect()
}

/// Fits a codebook to a seeded random subset of the images' descriptors.
pub fn codebook_from_images(images: &[GrayImage], params: &FeatureParams) -> Result<Codebook> {
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|img| {
            extract_dense_descriptors(img, params.step, &params.patch_sizes)
                .map(|ds| ds.into_iter().map(|d| d.vector).collect())
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<Vec<f64>> = per_image.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::NoDescriptors);
    }
    if all.len() > params.codebook_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut picked = sample(&mut rng, all.len(), params.codebook_samples).into_vec();
        picked.sort_unstable();
        all = picked.into_iter().map(|i| std::mem::take(&mut all[i])).collect();
    }
    learn_codebook(&all, params.codebook_size, params.kmeans_iters, params.seed)
}

/// One tensor per image, in input order.
pub fn tensors_for_images(
    images: &[GrayImage],
    codebook: &Codebook,
    params: &FeatureParams,
) -> Result<Vec<FeatureTensor>> {
    images
        .par_iter()
        .map(|img| build_feature_tensor(img, codebook, &params.grid, params.step, &params.patch_sizes))
        .collect()
}

/// Test-time scores: no source exclusions, repeated sources allowed.
pub fn score_images(model: &EpmModel, tensors: &[FeatureTensor]) -> Result<Vec<f64>> {
    tensors.par_iter().map(|t| score_greedy(model, t, &[], false).map(|s| s.score)).collect()
}

/// Trains the linear pyramid classifier on `train` and scores `test`.
pub fn baseline_scores(
    train: &[FeatureTensor],
    labels: &[Label],
    test: &[FeatureTensor],
    levels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let featurize =
        |ts: &[FeatureTensor]| -> Result<Vec<Vec<f64>>> { ts.par_iter().map(|t| spm_feature(t, levels)).collect() };
    let w = train_linear(&featurize(train)?, labels, cfg)?;
    Ok(featurize(test)?.iter().map(|x| linear_score(&w, x)).collect())
}
