//! Expanded parts model (EPM) for image classification.
//!
//! An EPM is a large collection of part templates, each tied to a fixed
//! fractional box of the (person-centred) image. An image is scored by
//! greedily picking up to `k` parts that respond best on their own boxes
//! while keeping the picked boxes from overlapping much, and averaging their
//! responses. Training is stochastic sub-gradient descent on the hinge loss
//! with the selection re-solved per sample, plus pruning of parts that stop
//! being selected.
//!
//! The pipeline is split into:
//!
//! * [`image_io`]: NetPBM images, dataset manifests, context crops.
//! * [`geometry`]: part boxes, the feature grid, IoU and candidate sampling.
//! * [`features`]: dense gradient descriptors, k-means codebook, and the
//!   integral bag-of-features tensor.
//! * [`model`]: parts, greedy and exhaustive scoring, model files.
//! * [`training`]: the SGD learner with pruning.
//! * [`eval`]: spatial-pyramid baseline, score fusion and average precision.
//! * [`pipeline`]: batch helpers from image lists to tensors and scores.
//! * [`synthetic`]: generator for small datasets with a localized signal.

pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod image_io;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use eval::{average_precision, fuse_scores, mean_ap, spm_feature, train_linear, RankedResults};
pub use features::{
    build_feature_tensor, extract_dense_descriptors, learn_codebook, quantize, region_feature, Codebook,
    DenseDescriptor, FeatureTensor, RegionFeature,
};
pub use geometry::{align_to_grid, iou, sample_candidate_locations, Grid, PartLocation};
pub use image_io::{crop_expand, load_image, read_manifest, DatasetManifest, GrayImage, Label, PixelBox};
pub use model::{
    init_part, load_model, part_score, save_model, score_exact, score_greedy, EpmModel, ImageId, Part, Selection,
};
pub use pipeline::{
    baseline_scores, codebook_from_images, load_images, score_images, tensors_for_images, FeatureParams,
};
pub use synthetic::{generate_synthetic, SynthConfig, SyntheticSplits};
pub use training::{
    compute_rates, frozen_objective, objective_value, prune_parts, sgd_step, train_epm, train_time_selection,
    IterationRecord, TrainConfig, TrainLog, Trainer, UsageMap,
};
