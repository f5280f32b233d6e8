//! Stochastic sub-gradient learning of the part model, with part pruning.
//!
//! The learner alternates between scoring one training image with the
//! weights fixed (which fixes the selected parts) and a hinge-loss step on
//! the selected parts with the selection fixed. Images are visited in
//! shuffled passes; after each outer iteration, parts that no image selected
//! are dropped. Rates are set per class, proportional to the size of the
//! other class, and divided once by the annealing factor.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eval::{average_precision, RankedResults};
use crate::features::{FeatureTensor, RegionFeature};
use crate::geometry::sample_candidate_locations;
use crate::image_io::Label;
use crate::model::{init_part, score_greedy, EpmModel, ImageId, Selection, DEFAULT_BETA};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Base learning rate.
    pub eta0: f64,
    pub lambda: f64,
    /// Parts used to score an image.
    pub k: usize,
    /// Candidate parts sampled from each positive training image.
    pub n: usize,
    /// Maximum IoU between two parts scoring the same image.
    pub beta: f64,
    pub outer_iters: usize,
    pub passes_per_iter: usize,
    /// Outer iteration after which the rate is annealed (1-based).
    pub anneal_at: usize,
    pub anneal_factor: f64,
    pub seed: u64,
    /// Forbid two selected parts from the same source image while training.
    pub unique_sources: bool,
    /// Minimum candidate span, in grid cells, along each axis.
    pub min_cells: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            lambda: 1e-5,
            k: 100,
            n: 200,
            beta: DEFAULT_BETA,
            outer_iters: 10,
            passes_per_iter: 5,
            anneal_at: 5,
            anneal_factor: 5.0,
            seed: 0,
            unique_sources: true,
            min_cells: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return fail("eta0 must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be non-negative");
        }
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.n == 0 {
            return fail("n (candidates per positive image) must be at least 1");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return fail("beta must lie in (0, 1]");
        }
        if self.outer_iters == 0 || self.passes_per_iter == 0 {
            return fail("iteration and pass counts must be at least 1");
        }
        if self.anneal_at == 0 || self.anneal_at > self.outer_iters {
            return fail("anneal_at must lie in 1..=outer_iters");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor.is_finite()) {
            return fail("anneal_factor must be positive");
        }
        if self.min_cells == 0 {
            return fail("min_cells must be at least 1");
        }
        Ok(())
    }
}

/// Per-class rates `(eta_pos, eta_neg)`, each proportional to the size of
/// the other class.
pub fn compute_rates(eta0: f64, m_pos: usize, m_neg: usize) -> (f64, f64) {
    let m = (m_pos + m_neg) as f64;
    (eta0 * m_neg as f64 / m, eta0 * m_pos as f64 / m)
}

/// Which parts were selected at least once in the current outer iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageMap {
    used: Vec<bool>,
}

impl UsageMap {
    pub fn new(num_parts: usize) -> Self {
        Self { used: vec![false; num_parts] }
    }

    pub fn from_flags(used: Vec<bool>) -> Self {
        Self { used }
    }

    pub fn mark(&mut self, sel: &Selection) {
        for &p in &sel.chosen {
            self.used[p] = true;
        }
    }

    pub fn is_used(&self, part: usize) -> bool {
        self.used[part]
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }

    pub fn used_count(&self) -> usize {
        self.used.iter().filter(|&&u| u).count()
    }

    /// Indices of used parts, ascending.
    pub fn retained(&self) -> Vec<usize> {
        (0..self.used.len()).filter(|&i| self.used[i]).collect()
    }
}

/// One sub-gradient step for a training image.
///
/// Every template shrinks by `1 - eta * lambda` (floored at 0). If the margin
/// is violated (`y * score < 1`), each selected part also moves by
/// `y * eta / |chosen|` times its region feature. `features` must align with
/// `sel.chosen`. Returns whether the margin was violated.
pub fn sgd_step(
    model: &mut EpmModel,
    sel: &Selection,
    features: &[RegionFeature],
    label: Label,
    eta: f64,
    lambda: f64,
) -> bool {
    debug_assert_eq!(sel.chosen.len(), features.len());
    let y = label.sign();
    let violated = y * sel.score < 1.0;
    let shrink = (1.0 - eta * lambda).max(0.0);
    for p in &mut model.parts {
        p.template.iter_mut().for_each(|w| *w *= shrink);
    }
    if violated && !sel.chosen.is_empty() {
        let coef = y * eta / sel.chosen.len() as f64;
        for (&p, f) in sel.chosen.iter().zip(features) {
            let template = &mut model.parts[p].template;
            let d = f.appearance.len();
            for (w, a) in template[..d].iter_mut().zip(&f.appearance) {
                *w += coef * a;
            }
            template[d] += coef * RegionFeature::BIAS;
        }
    }
    violated
}

/// Keeps exactly the parts flagged as used, in order.
pub fn prune_parts(model: &EpmModel, usage: &UsageMap) -> Result<EpmModel> {
    if usage.len() != model.len() {
        return Err(Error::DimensionMismatch { expected: model.len(), found: usage.len() });
    }
    let retained = usage.retained();
    if retained.is_empty() {
        return Err(Error::PruneAll);
    }
    let parts = retained.iter().map(|&i| model.parts[i].clone()).collect();
    EpmModel::new(parts, *model.grid(), model.d(), model.k(), model.beta())
}

/// Scores training image `index` against every part not sampled from it.
///
/// `None` when every part came from this image.
pub fn train_time_selection(
    model: &EpmModel,
    tensor: &FeatureTensor,
    index: usize,
    unique_sources: bool,
) -> Result<Option<Selection>> {
    match score_greedy(model, tensor, &[ImageId(index as u32)], unique_sources) {
        Ok(sel) => Ok(Some(sel)),
        Err(Error::EmptySelection) => Ok(None),
        Err(e) => Err(e),
    }
}

fn scan(model: &EpmModel, tensors: &[FeatureTensor], unique_sources: bool) -> Result<Vec<Option<Selection>>> {
    tensors.par_iter().enumerate().map(|(i, t)| train_time_selection(model, t, i, unique_sources)).collect()
}

fn regularized_hinge(model: &EpmModel, selections: &[Option<Selection>], labels: &[Label], lambda: f64) -> f64 {
    let hinge: f64 = selections
        .iter()
        .zip(labels)
        .map(|(s, y)| (1.0 - y.sign() * s.as_ref().map_or(0.0, |s| s.score)).max(0.0))
        .sum();
    0.5 * lambda * model.weight_norm_sq() + hinge / labels.len() as f64
}

/// Regularized mean hinge loss over the training set, each image scored
/// with train-time exclusions (its own parts excluded).
pub fn objective_value(
    model: &EpmModel,
    tensors: &[FeatureTensor],
    labels: &[Label],
    lambda: f64,
    unique_sources: bool,
) -> Result<f64> {
    if tensors.len() != labels.len() || labels.is_empty() {
        return Err(Error::DimensionMismatch { expected: labels.len(), found: tensors.len() });
    }
    let selections = scan(model, tensors, unique_sources)?;
    Ok(regularized_hinge(model, &selections, labels, lambda))
}

/// Single-sample objective with the selection held fixed:
/// `lambda / 2 * |w|^2 + max(0, 1 - y * mean_p(w_p . f_p))`.
pub fn frozen_objective(
    model: &EpmModel,
    chosen: &[usize],
    features: &[RegionFeature],
    label: Label,
    lambda: f64,
) -> f64 {
    let score =
        chosen.iter().zip(features).map(|(&p, f)| f.dot(&model.parts[p].template)).sum::<f64>() / chosen.len() as f64;
    0.5 * lambda * model.weight_norm_sq() + (1.0 - label.sign() * score).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 0 for the initialized model.
    pub iter: usize,
    pub objective: f64,
    pub num_parts: usize,
    pub train_ap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,num_parts,train_ap\n");
        for r in &self.records {
            writeln!(out, "{},{:.16e},{},{:.16e}", r.iter, r.objective, r.num_parts, r.train_ap).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Stepwise driver for part-model training.
///
/// [`train_epm`] runs it to completion; the step methods exist so callers
/// can inspect the model between the passes of an iteration and its pruning.
/// Each outer iteration is one [`run_passes`](Self::run_passes) followed by
/// one [`finish_iteration`](Self::finish_iteration).
pub struct Trainer<'a> {
    tensors: &'a [FeatureTensor],
    labels: &'a [Label],
    cfg: TrainConfig,
    model: EpmModel,
    rng: ChaCha8Rng,
    eta0: f64,
    iter: usize,
    m_pos: usize,
    m_neg: usize,
    usage: UsageMap,
    log: TrainLog,
    initial_parts: usize,
    last_retained: Vec<usize>,
}

impl<'a> Trainer<'a> {
    /// Validates the inputs and builds the initial model from `cfg.n` random
    /// grid-aligned boxes of every positive image. Boxes that contain no
    /// descriptors are skipped.
    pub fn new(tensors: &'a [FeatureTensor], labels: &'a [Label], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if tensors.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: labels.len(), found: tensors.len() });
        }
        let m_pos = labels.iter().filter(|l| l.is_positive()).count();
        let m_neg = labels.len() - m_pos;
        if m_pos == 0 {
            return Err(Error::EmptyClass("positive"));
        }
        if m_neg == 0 {
            return Err(Error::EmptyClass("negative"));
        }
        let grid = *tensors[0].grid();
        let d = tensors[0].d();
        for t in tensors {
            if t.d() != d {
                return Err(Error::DimensionMismatch { expected: d, found: t.d() });
            }
            if t.grid() != &grid {
                return Err(Error::InvalidGrid("training tensors use different grids".into()));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut parts = Vec::new();
        for (i, (t, label)) in tensors.iter().zip(labels).enumerate() {
            if !label.is_positive() {
                continue;
            }
            for loc in sample_candidate_locations(&grid, cfg.n, cfg.min_cells, &mut rng)? {
                match init_part(t, &loc, ImageId(i as u32)) {
                    Ok(p) => parts.push(p),
                    Err(Error::DegenerateRegion) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if parts.is_empty() {
            return Err(Error::DegenerateRegion);
        }
        let model = EpmModel::new(parts, grid, d, cfg.k, cfg.beta)?;
        let initial_parts = model.len();
        let mut trainer = Self {
            tensors,
            labels,
            eta0: cfg.eta0,
            cfg,
            usage: UsageMap::new(model.len()),
            model,
            rng,
            iter: 0,
            m_pos,
            m_neg,
            log: TrainLog::default(),
            initial_parts,
            last_retained: Vec::new(),
        };
        let record = trainer.evaluate()?;
        info!("init: {} parts, objective {:.6}, train AP {:.4}", record.num_parts, record.objective, record.train_ap);
        trainer.log.records.push(record);
        Ok(trainer)
    }

    pub fn model(&self) -> &EpmModel {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn usage(&self) -> &UsageMap {
        &self.usage
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed outer iterations.
    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn current_eta0(&self) -> f64 {
        self.eta0
    }

    pub fn initial_parts(&self) -> usize {
        self.initial_parts
    }

    /// Pre-pruning indices of the parts kept by the latest pruning, so
    /// `model().parts[i]` was part `last_retained()[i]` before it.
    pub fn last_retained(&self) -> &[usize] {
        &self.last_retained
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.outer_iters
    }

    /// Selections of every training image under the current model, with
    /// train-time exclusions.
    pub fn training_selections(&self) -> Result<Vec<Option<Selection>>> {
        scan(&self.model, self.tensors, self.cfg.unique_sources)
    }

    /// The shuffled SGD passes of the current outer iteration.
    pub fn run_passes(&mut self) -> Result<()> {
        let (eta_pos, eta_neg) = compute_rates(self.eta0, self.m_pos, self.m_neg);
        let mut order: Vec<usize> = (0..self.tensors.len()).collect();
        for _ in 0..self.cfg.passes_per_iter {
            order.shuffle(&mut self.rng);
            for &i in &order {
                let label = self.labels[i];
                let eta = if label.is_positive() { eta_pos } else { eta_neg };
                let tensor = &self.tensors[i];
                match train_time_selection(&self.model, tensor, i, self.cfg.unique_sources)? {
                    Some(sel) => {
                        let features = self.model.region_features(tensor, &sel.chosen)?;
                        self.usage.mark(&sel);
                        sgd_step(&mut self.model, &sel, &features, label, eta, self.cfg.lambda);
                    }
                    None => {
                        let empty = Selection { chosen: vec![], part_scores: vec![], score: 0.0 };
                        sgd_step(&mut self.model, &empty, &[], label, eta, self.cfg.lambda);
                    }
                }
            }
        }
        Ok(())
    }

    /// Ends the outer iteration: records which parts the final weights
    /// select, prunes the rest, anneals on schedule and logs.
    ///
    /// Usage covers both the selections made during the passes and one scan
    /// with the final weights, so no image's selection changes on pruning.
    pub fn finish_iteration(&mut self) -> Result<&IterationRecord> {
        for sel in self.training_selections()?.iter().flatten() {
            self.usage.mark(sel);
        }
        self.model = prune_parts(&self.model, &self.usage)?;
        self.last_retained = self.usage.retained();
        self.usage = UsageMap::new(self.model.len());
        self.iter += 1;
        if self.iter == self.cfg.anneal_at {
            self.eta0 /= self.cfg.anneal_factor;
        }
        let record = self.evaluate()?;
        info!(
            "iter {}: {} parts, objective {:.6}, train AP {:.4}",
            record.iter, record.num_parts, record.objective, record.train_ap
        );
        self.log.records.push(record);
        Ok(self.log.records.last().expect("just pushed"))
    }

    pub fn run_iteration(&mut self) -> Result<&IterationRecord> {
        self.run_passes()?;
        self.finish_iteration()
    }

    fn evaluate(&self) -> Result<IterationRecord> {
        let selections = self.training_selections()?;
        let objective = regularized_hinge(&self.model, &selections, self.labels, self.cfg.lambda);
        let scores: Vec<f64> = selections.iter().map(|s| s.as_ref().map_or(0.0, |s| s.score)).collect();
        let train_ap = average_precision(&RankedResults::new(&scores, self.labels)?)?;
        Ok(IterationRecord { iter: self.iter, objective, num_parts: self.model.len(), train_ap })
    }

    pub fn into_parts(self) -> (EpmModel, TrainLog) {
        (self.model, self.log)
    }
}

/// Trains a part model on per-image tensors and labels.
pub fn train_epm(tensors: &[FeatureTensor], labels: &[Label], cfg: TrainConfig) -> Result<(EpmModel, TrainLog)> {
    let mut trainer = Trainer::new(tensors, labels, cfg)?;
    while !trainer.is_done() {
        trainer.run_iteration()?;
    }
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Grid, PartLocation};
    use crate::model::Part;
    use rand::Rng;
    use Label::{Negative as N, Positive as P};

    #[test]
    fn rate_examples() {
        let (p, n) = compute_rates(0.1, 10, 40);
        assert!((p - 0.08).abs() < 1e-15 && (n - 0.02).abs() < 1e-15);
        assert_eq!(compute_rates(0.3, 7, 7), (0.15, 0.15));
        assert_eq!(compute_rates(1.0, 1, 1), (0.5, 0.5));
    }

    #[test]
    fn rates_balance_class_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (mp, mn) = (rng.gen_range(1..500), rng.gen_range(1..500));
            let eta0 = rng.gen_range(1e-4..1.0);
            let (ep, en) = compute_rates(eta0, mp, mn);
            assert!((ep * mp as f64 - en * mn as f64).abs() <= 1e-12 * ep * mp as f64);
        }
    }

    fn one_part_model(template: Vec<f64>) -> EpmModel {
        let d = template.len() - 1;
        let part = Part { template, location: PartLocation::FULL, source: ImageId(0) };
        EpmModel::new(vec![part], Grid::new(2, 2).unwrap(), d, 1, DEFAULT_BETA).unwrap()
    }

    fn sel(score: f64) -> Selection {
        Selection { chosen: vec![0], part_scores: vec![score], score }
    }

    #[test]
    fn satisfied_margin_only_shrinks() {
        let mut m = one_part_model(vec![1.0, 0.0]);
        let f = RegionFeature { appearance: vec![1.0] };
        // Exact boundary y * s = 1 does not violate the margin.
        let violated = sgd_step(&mut m, &sel(1.0), &[f], P, 0.1, 0.01);
        assert!(!violated);
        assert_eq!(m.parts[0].template, vec![1.0 * (1.0 - 0.1 * 0.01), 0.0]);
    }

    #[test]
    fn violated_margin_moves_toward_feature() {
        // One appearance dimension, zero bias weight: score = 0.5 * 1.
        let mut m = one_part_model(vec![0.5, 0.0]);
        let f = RegionFeature { appearance: vec![1.0] };
        assert!(sgd_step(&mut m, &sel(0.5), &[f], P, 0.1, 0.0));
        assert!((m.parts[0].template[0] - 0.6).abs() < 1e-15);
        // The bias slot -1 pulls the bias weight down for a positive.
        assert!((m.parts[0].template[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn update_divides_by_selection_size() {
        let g = Grid::new(3, 2).unwrap();
        let parts = (0..2)
            .map(|i| Part { template: vec![0.0, 0.0], location: g.location(i, 0, i + 1, 1), source: ImageId(i as u32) })
            .collect();
        let mut m = EpmModel::new(parts, g, 1, 2, DEFAULT_BETA).unwrap();
        let s = Selection { chosen: vec![1, 0], part_scores: vec![0.0, 0.0], score: 0.0 };
        let feats = [RegionFeature { appearance: vec![1.0] }, RegionFeature { appearance: vec![0.5] }];
        sgd_step(&mut m, &s, &feats, N, 0.2, 0.0);
        assert!((m.parts[1].template[0] + 0.1).abs() < 1e-15);
        assert!((m.parts[0].template[0] + 0.05).abs() < 1e-15);
        assert!((m.parts[0].template[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn prune_semantics() {
        let g = Grid::new(4, 2).unwrap();
        let parts: Vec<Part> = (0..3)
            .map(|i| Part {
                template: vec![i as f64, 1.0],
                location: g.location(i, 0, i + 1, 1),
                source: ImageId(10 + i as u32),
            })
            .collect();
        let m = EpmModel::new(parts, g, 1, 2, DEFAULT_BETA).unwrap();
        assert_eq!(prune_parts(&m, &UsageMap::from_flags(vec![true; 3])).unwrap(), m);
        assert!(matches!(prune_parts(&m, &UsageMap::new(3)), Err(Error::PruneAll)));
        let pruned = prune_parts(&m, &UsageMap::from_flags(vec![true, false, true])).unwrap();
        assert_eq!(pruned.parts, vec![m.parts[0].clone(), m.parts[2].clone()]);
        assert_eq!(pruned.parts[1].source, ImageId(12));
        assert!(prune_parts(&m, &UsageMap::new(2)).is_err());
    }

    fn tiny_tensor(words: &[(f64, f64, usize)]) -> FeatureTensor {
        FeatureTensor::from_words(Grid::new(3, 3).unwrap(), 3, 10, 10, words.iter().copied()).unwrap()
    }

    #[test]
    fn zero_templates_give_unit_objective() {
        let g = Grid::new(3, 3).unwrap();
        let parts = (0..2)
            .map(|i| Part { template: vec![0.0; 4], location: g.location(0, 0, 2, 2), source: ImageId(i) })
            .collect();
        let m = EpmModel::new(parts, g, 3, 2, DEFAULT_BETA).unwrap();
        let ts = vec![tiny_tensor(&[(1.0, 1.0, 0)]), tiny_tensor(&[(8.0, 8.0, 2)])];
        assert_eq!(objective_value(&m, &ts, &[P, N], 1e-5, true).unwrap(), 1.0);
    }

    #[test]
    fn loss_free_objective_is_zero() {
        // Bias weights alone push every score to +-2.
        let g = Grid::new(3, 3).unwrap();
        let parts = vec![
            Part { template: vec![0.0, 0.0, 0.0, -2.0], location: g.location(0, 0, 2, 2), source: ImageId(1) },
            Part { template: vec![0.0, 0.0, 0.0, 2.0], location: g.location(0, 0, 2, 2), source: ImageId(0) },
        ];
        let m = EpmModel::new(parts, g, 3, 1, DEFAULT_BETA).unwrap();
        let ts = vec![tiny_tensor(&[(1.0, 1.0, 0)]), tiny_tensor(&[(8.0, 8.0, 2)])];
        // Image 0 may only use part 0 (score 2); image 1 only part 1 (score -2).
        assert_eq!(objective_value(&m, &ts, &[P, N], 0.0, true).unwrap(), 0.0);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.k, c.n, c.outer_iters, c.passes_per_iter), (1e-5, 100, 200, 10, 5));
        assert_eq!((c.anneal_at, c.anneal_factor, c.beta), (5, 5.0, 1.0 / 3.0));
        assert!(c.validate().is_ok());
        assert!(TrainConfig { n: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { anneal_at: 11, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { eta0: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn trainer_rejects_bad_inputs() {
        let ts = vec![tiny_tensor(&[(1.0, 1.0, 0)]), tiny_tensor(&[(8.0, 8.0, 2)])];
        let cfg = TrainConfig { n: 0, ..TrainConfig::default() };
        assert!(matches!(Trainer::new(&ts, &[P, N], cfg), Err(Error::Config(_))));
        let cfg = TrainConfig::default();
        assert!(matches!(Trainer::new(&ts, &[P, P], cfg.clone()), Err(Error::EmptyClass("negative"))));
        assert!(matches!(Trainer::new(&ts, &[N, N], cfg), Err(Error::EmptyClass("positive"))));
    }
}
