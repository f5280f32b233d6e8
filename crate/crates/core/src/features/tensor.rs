use std::fs;
use std::path::Path;

use crate::features::codebook::{quantize, Codebook};
use crate::features::descriptor::extract_dense_descriptors;
use crate::geometry::{Grid, PartLocation};
use crate::image_io::GrayImage;
use crate::{Error, Result};

const TENSOR_MAGIC: &[u8; 6] = b"EPMFT1";

/// Integral bag-of-words histogram over a lattice.
///
/// `value(i, j, w)` is the number of descriptors quantized to word `w` whose
/// centres fall in the cells left of lattice column `i` and above lattice
/// row `j`. Entries are stored in `(x, y, word)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    grid: Grid,
    d: usize,
    values: Vec<f64>,
}

/// Cell containing a coordinate: `floor(pos * cells / extent)`. A position
/// exactly on a cell boundary lands in the higher cell.
pub fn cell_of(pos: f64, extent: usize, cells: usize) -> usize {
    let c = (pos * cells as f64 / extent as f64).floor();
    c.clamp(0.0, (cells - 1) as f64) as usize
}

impl FeatureTensor {
    /// Builds the tensor from already-quantized descriptor centres on an
    /// image of `width x height` pixels.
    pub fn from_words(
        grid: Grid,
        d: usize,
        width: usize,
        height: usize,
        words: impl IntoIterator<Item = (f64, f64, usize)>,
    ) -> Result<Self> {
        let (s, t) = (grid.s(), grid.t());
        let mut values = vec![0.0; s * t * d];
        // Cell (a, b) is counted at lattice point (a + 1, b + 1), then the
        // running sums below turn point counts into prefix sums.
        for (cx, cy, w) in words {
            if w >= d {
                return Err(Error::DimensionMismatch { expected: d, found: w + 1 });
            }
            let a = cell_of(cx, width, grid.cells_x());
            let b = cell_of(cy, height, grid.cells_y());
            values[((a + 1) * t + (b + 1)) * d + w] += 1.0;
        }
        for i in 0..s {
            for j in 1..t {
                for w in 0..d {
                    values[(i * t + j) * d + w] += values[(i * t + j - 1) * d + w];
                }
            }
        }
        for i in 1..s {
            for j in 0..t {
                for w in 0..d {
                    values[(i * t + j) * d + w] += values[((i - 1) * t + j) * d + w];
                }
            }
        }
        Ok(Self { grid, d, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Vocabulary size.
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, w: usize) -> f64 {
        self.values[(i * self.grid.t() + j) * self.d + w]
    }

    #[inline]
    fn column(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.grid.t() + j) * self.d;
        &self.values[start..start + self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Un-normalized word counts of the box with lattice corners
    /// `(i, j)`-`(k, l)`, written into `out`.
    pub fn raw_histogram_into(&self, [i, j, k, l]: [usize; 4], out: &mut [f64]) {
        let (br, tl, tr, bl) = (self.column(k, l), self.column(i, j), self.column(k, j), self.column(i, l));
        for (w, o) in out.iter_mut().enumerate() {
            *o = br[w] + tl[w] - tr[w] - bl[w];
        }
    }

    pub fn raw_histogram(&self, loc: &PartLocation) -> Result<Vec<f64>> {
        let idx = self.grid.indices(loc)?;
        let mut h = vec![0.0; self.d];
        self.raw_histogram_into(idx, &mut h);
        Ok(h)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 8 * self.values.len());
        out.extend_from_slice(TENSOR_MAGIC);
        for n in [self.grid.s(), self.grid.t(), self.d] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 18 || &bytes[..6] != TENSOR_MAGIC {
            let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(6)]).into_owned();
            return Err(Error::UnknownFormat(shown));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (s, t, d) = (u32_at(6), u32_at(10), u32_at(14));
        let grid = Grid::new(s, t)?;
        let n = s * t * d;
        if d == 0 || bytes.len() != 18 + 8 * n {
            return Err(Error::Corrupt(format!("tensor payload of {} bytes", bytes.len() - 18)));
        }
        let values = bytes[18..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { grid, d, values })
    }
}

/// Extracts dense descriptors, quantizes them, and accumulates the integral
/// histogram over `grid`.
pub fn build_feature_tensor(
    img: &GrayImage,
    codebook: &Codebook,
    grid: &Grid,
    step: usize,
    patch_sizes: &[usize],
) -> Result<FeatureTensor> {
    let descs = extract_dense_descriptors(img, step, patch_sizes)?;
    FeatureTensor::from_words(
        *grid,
        codebook.len(),
        img.width(),
        img.height(),
        descs.iter().map(|d| (d.cx, d.cy, quantize(&d.vector, codebook))),
    )
}

/// Appearance of one box: square roots of the L1-normalized word histogram
/// (unit L2 norm), followed by a constant `-1` bias slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeature {
    pub appearance: Vec<f64>,
}

impl RegionFeature {
    pub const BIAS: f64 = -1.0;

    pub fn from_raw(mut hist: Vec<f64>) -> Self {
        normalize_sqrt_l1(&mut hist);
        Self { appearance: hist }
    }

    /// True when the box contained no descriptors.
    pub fn is_empty(&self) -> bool {
        self.appearance.iter().all(|&v| v == 0.0)
    }

    /// Dimension including the bias slot.
    pub fn len(&self) -> usize {
        self.appearance.len() + 1
    }

    /// `template . [appearance; -1]`. `template` has `d + 1` entries.
    #[inline]
    pub fn dot(&self, template: &[f64]) -> f64 {
        debug_assert_eq!(template.len(), self.len());
        let d = self.appearance.len();
        self.appearance.iter().zip(template).map(|(a, w)| a * w).sum::<f64>() + Self::BIAS * template[d]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.appearance.clone();
        v.push(Self::BIAS);
        v
    }
}

/// In-place `sqrt(h / sum(h))`; leaves an all-zero histogram at zero.
pub(crate) fn normalize_sqrt_l1(hist: &mut [f64]) {
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h = (*h / total).sqrt());
    }
}

/// Histogram of a grid-aligned box by inclusion-exclusion, normalized.
pub fn region_feature(tensor: &FeatureTensor, loc: &PartLocation) -> Result<RegionFeature> {
    tensor.raw_histogram(loc).map(RegionFeature::from_raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_descriptor_is_one_hot_prefix_sum() {
        let grid = Grid::new(5, 5).unwrap();
        let t = FeatureTensor::from_words(grid, 6, 40, 40, [(20.0, 20.0, 3)]).unwrap();
        // Centre (20, 20) sits on the boundary between cells 1 and 2: cell 2 wins.
        for i in 0..5 {
            for j in 0..5 {
                for w in 0..6 {
                    let expect = if w == 3 && i >= 3 && j >= 3 { 1.0 } else { 0.0 };
                    assert_eq!(t.value(i, j, w), expect, "({i},{j},{w})");
                }
            }
        }
    }

    #[test]
    fn corner_totals_descriptor_count() {
        let grid = Grid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let words: Vec<_> =
            (0..300).map(|_| (rng.gen_range(0.0..64.0), rng.gen_range(0.0..48.0), rng.gen_range(0..9))).collect();
        let t = FeatureTensor::from_words(grid, 9, 64, 48, words).unwrap();
        let total: f64 = (0..9).map(|w| t.value(16, 16, w)).sum();
        assert_eq!(total, 300.0);
    }

    #[test]
    fn whole_image_region_is_global_histogram() {
        let grid = Grid::new(3, 3).unwrap();
        let t =
            FeatureTensor::from_words(grid, 3, 10, 10, [(1.0, 1.0, 0), (9.0, 2.0, 0), (5.0, 5.0, 1), (7.0, 8.0, 0)])
                .unwrap();
        let f = region_feature(&t, &PartLocation::FULL).unwrap();
        let expect = [(3.0f64 / 4.0).sqrt(), (1.0f64 / 4.0).sqrt(), 0.0];
        for (a, b) in f.appearance.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(f.to_vec().last(), Some(&-1.0));
    }

    #[test]
    fn empty_region_is_zero_with_bias() {
        let grid = Grid::new(3, 3).unwrap();
        let t = FeatureTensor::from_words(grid, 2, 10, 10, [(1.0, 1.0, 0)]).unwrap();
        let f = region_feature(&t, &PartLocation::new(0.5, 0.5, 1.0, 1.0).unwrap()).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.to_vec(), vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn misaligned_region_errors() {
        let t = FeatureTensor::from_words(Grid::new(3, 3).unwrap(), 2, 10, 10, []).unwrap();
        let loc = PartLocation::new(0.1, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(region_feature(&t, &loc), Err(Error::NotGridAligned(_))));
    }

    #[test]
    fn tensor_file_round_trip_and_magic() {
        let t = FeatureTensor::from_words(Grid::new(4, 3).unwrap(), 5, 10, 10, [(2.0, 3.0, 4)]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..6], b"EPMFT1");
        assert_eq!(&bytes[6..10], &4u32.to_le_bytes());
        assert_eq!(bytes.len(), 18 + 8 * 4 * 3 * 5);
        assert_eq!(FeatureTensor::from_bytes(&bytes).unwrap(), t);
        assert!(matches!(FeatureTensor::from_bytes(b"EPMFT2xxxxxxxxxxxxxxxx"), Err(Error::UnknownFormat(_))));
        assert!(matches!(FeatureTensor::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
    }

    proptest! {
        #[test]
        fn tensor_is_monotone_and_zero_on_axes(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = Grid::new(rng.gen_range(2..8), rng.gen_range(2..8)).unwrap();
            let words: Vec<_> = (0..50)
                .map(|_| (rng.gen_range(0.0..30.0), rng.gen_range(0.0..20.0), rng.gen_range(0..4)))
                .collect();
            let t = FeatureTensor::from_words(grid, 4, 30, 20, words).unwrap();
            for w in 0..4 {
                for i in 0..grid.s() {
                    for j in 0..grid.t() {
                        let v = t.value(i, j, w);
                        prop_assert!(v >= 0.0);
                        if i == 0 || j == 0 { prop_assert_eq!(v, 0.0); }
                        if i > 0 { prop_assert!(v >= t.value(i - 1, j, w)); }
                        if j > 0 { prop_assert!(v >= t.value(i, j - 1, w)); }
                    }
                }
            }
        }
    }
}
