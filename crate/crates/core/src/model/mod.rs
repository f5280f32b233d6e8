//! The part collection and its scoring function.
//!
//! A model scores an image by evaluating every part template on the part's
//! own box and then picking a sparse, low-overlap subset of the best
//! responders (see [`score_greedy`]). [`score_exact`] solves the same
//! selection by enumeration and exists to check the greedy solver.

mod io;
mod select;

pub use io::{load_model, model_to_string, parse_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use select::{exact_select, greedy_select, score_exact, score_greedy, Candidate, Selection, EXACT_MAX_PARTS};

use std::fmt;

use crate::features::{region_feature, FeatureTensor, RegionFeature};
use crate::geometry::{Grid, PartLocation};
use crate::{Error, Result};

/// Index of a training image within its manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageId(pub u32);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    /// Appearance weights followed by the bias weight (`d + 1` entries).
    pub template: Vec<f64>,
    pub location: PartLocation,
    /// Training image the part was initialized from.
    pub source: ImageId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpmModel {
    pub parts: Vec<Part>,
    grid: Grid,
    d: usize,
    k: usize,
    beta: f64,
}

pub const DEFAULT_BETA: f64 = 1.0 / 3.0;

impl EpmModel {
    pub fn new(parts: Vec<Part>, grid: Grid, d: usize, k: usize, beta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("selection budget k must be at least 1".into()));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("overlap threshold {beta} outside (0, 1]")));
        }
        for p in &parts {
            if p.template.len() != d + 1 {
                return Err(Error::DimensionMismatch { expected: d + 1, found: p.template.len() });
            }
            grid.indices(&p.location)?;
        }
        Ok(Self { parts, grid, d, k, beta })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Squared L2 norm of all templates stacked.
    pub fn weight_norm_sq(&self) -> f64 {
        self.parts.iter().flat_map(|p| &p.template).map(|w| w * w).sum()
    }

    /// Same parts with every template multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut m = self.clone();
        for p in &mut m.parts {
            p.template.iter_mut().for_each(|w| *w *= c);
        }
        m
    }

    fn check_tensor(&self, tensor: &FeatureTensor) -> Result<()> {
        if tensor.d() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: tensor.d() });
        }
        if tensor.grid() != &self.grid {
            return Err(Error::InvalidGrid(format!(
                "tensor grid {}x{} differs from model grid {}x{}",
                tensor.grid().s(),
                tensor.grid().t(),
                self.grid.s(),
                self.grid.t()
            )));
        }
        Ok(())
    }

    /// Response of every part on its own box of `tensor`.
    pub fn part_scores(&self, tensor: &FeatureTensor) -> Result<Vec<f64>> {
        self.check_tensor(tensor)?;
        let mut hist = vec![0.0; self.d];
        self.parts
            .iter()
            .map(|p| {
                let idx = self.grid.indices(&p.location)?;
                tensor.raw_histogram_into(idx, &mut hist);
                Ok(sqrt_l1_dot(&hist, &p.template))
            })
            .collect()
    }

    /// Region features of the given parts, in order.
    pub fn region_features(&self, tensor: &FeatureTensor, parts: &[usize]) -> Result<Vec<RegionFeature>> {
        self.check_tensor(tensor)?;
        parts.iter().map(|&p| region_feature(tensor, &self.parts[p].location)).collect()
    }
}

/// `template . [sqrt(hist / |hist|_1); -1]` without materializing the feature.
#[inline]
fn sqrt_l1_dot(hist: &[f64], template: &[f64]) -> f64 {
    let d = hist.len();
    let total: f64 = hist.iter().sum();
    let appearance =
        if total > 0.0 { hist.iter().zip(template).map(|(h, w)| (h / total).sqrt() * w).sum::<f64>() } else { 0.0 };
    appearance + RegionFeature::BIAS * template[d]
}

/// A part whose template is `[2 f; 1]` for the region feature `f` of `loc`:
/// it scores 1 on an identical region and -1 on an orthogonal one.
pub fn init_part(tensor: &FeatureTensor, loc: &PartLocation, source: ImageId) -> Result<Part> {
    let f = region_feature(tensor, loc)?;
    if f.is_empty() {
        return Err(Error::DegenerateRegion);
    }
    let mut template: Vec<f64> = f.appearance.iter().map(|a| 2.0 * a).collect();
    template.push(1.0);
    Ok(Part { template, location: *loc, source })
}

/// `w_p . f(x, l_p)` for one part.
pub fn part_score(part: &Part, tensor: &FeatureTensor) -> Result<f64> {
    if part.template.len() != tensor.d() + 1 {
        return Err(Error::DimensionMismatch { expected: tensor.d() + 1, found: part.template.len() });
    }
    Ok(region_feature(tensor, &part.location)?.dot(&part.template))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 2 x 2 cell grid with hand-placed words per cell.
    fn tensor(cells: [&[usize]; 4], d: usize) -> FeatureTensor {
        let centres = [(2.5, 2.5), (7.5, 2.5), (2.5, 7.5), (7.5, 7.5)];
        let words = cells.iter().zip(centres).flat_map(|(ws, (x, y))| ws.iter().map(move |&w| (x, y, w)));
        FeatureTensor::from_words(Grid::new(3, 3).unwrap(), d, 10, 10, words).unwrap()
    }

    fn quadrant(q: usize) -> PartLocation {
        let (x, y) = ((q % 2) as f64 * 0.5, (q / 2) as f64 * 0.5);
        PartLocation::new(x, y, x + 0.5, y + 0.5).unwrap()
    }

    #[test]
    fn init_part_scores_one_on_its_source() {
        let t = tensor([&[0, 0, 1], &[2], &[3, 3], &[0, 3]], 4);
        let p = init_part(&t, &quadrant(0), ImageId(0)).unwrap();
        assert_eq!(p.template.len(), 5);
        assert!((part_score(&p, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_region_scores_minus_one() {
        let src = tensor([&[0, 1], &[], &[], &[]], 4);
        let other = tensor([&[2, 3, 3], &[], &[], &[]], 4);
        let p = init_part(&src, &quadrant(0), ImageId(0)).unwrap();
        assert!((part_score(&p, &other).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_half_scores_zero() {
        // f = (1, 0) vs g = (1/2, sqrt(3)/2) after sqrt-L1: counts (1, 0) and (1, 3).
        let src = tensor([&[0], &[], &[], &[]], 2);
        let other = tensor([&[0, 1, 1, 1], &[], &[], &[]], 2);
        let p = init_part(&src, &quadrant(0), ImageId(0)).unwrap();
        assert!(part_score(&p, &other).unwrap().abs() < 1e-15);
    }

    #[test]
    fn degenerate_region_cannot_initialize() {
        let t = tensor([&[0], &[], &[], &[]], 2);
        assert!(matches!(init_part(&t, &quadrant(3), ImageId(0)), Err(Error::DegenerateRegion)));
    }

    #[test]
    fn zero_template_scores_zero() {
        let t = tensor([&[0, 1], &[1], &[0], &[1, 1]], 2);
        let p = Part { template: vec![0.0; 3], location: quadrant(1), source: ImageId(2) };
        assert_eq!(part_score(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn part_score_dimension_mismatch() {
        let t = tensor([&[0], &[], &[], &[]], 2);
        let p = Part { template: vec![0.0; 2], location: quadrant(0), source: ImageId(0) };
        assert!(matches!(part_score(&p, &t), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn random_part_score_matches_direct_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let cells: Vec<Vec<usize>> =
                (0..4).map(|_| (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..5)).collect()).collect();
            let t = tensor([&cells[0], &cells[1], &cells[2], &cells[3]], 5);
            let q = rng.gen_range(0..4);
            let template: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = Part { template: template.clone(), location: quadrant(q), source: ImageId(0) };

            let mut counts = [0.0; 5];
            cells[q].iter().for_each(|&w| counts[w] += 1.0);
            let total: f64 = counts.iter().sum();
            let direct: f64 = (0..5).map(|w| template[w] * (counts[w] / total).sqrt()).sum::<f64>() - template[5];
            assert!((part_score(&p, &t).unwrap() - direct).abs() < 1e-12);

            let fast = EpmModel::new(vec![p], *t.grid(), 5, 1, DEFAULT_BETA).unwrap().part_scores(&t).unwrap();
            assert!((fast[0] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn model_validation() {
        let g = Grid::new(3, 3).unwrap();
        let p = Part { template: vec![0.0; 3], location: quadrant(0), source: ImageId(0) };
        assert!(EpmModel::new(vec![p.clone()], g, 2, 0, DEFAULT_BETA).is_err());
        assert!(EpmModel::new(vec![p.clone()], g, 2, 1, 0.0).is_err());
        assert!(EpmModel::new(vec![p.clone()], g, 3, 1, DEFAULT_BETA).is_err());
        let off = Part { location: PartLocation::new(0.1, 0.0, 0.5, 0.5).unwrap(), ..p };
        assert!(EpmModel::new(vec![off], g, 2, 1, DEFAULT_BETA).is_err());
    }
}
