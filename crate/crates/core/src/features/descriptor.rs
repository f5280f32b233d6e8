use std::f64::consts::PI;

use crate::image_io::GrayImage;
use crate::{Error, Result};

/// 4 x 4 spatial cells x 8 orientation bins.
pub const DESCRIPTOR_DIM: usize = 128;
const SPATIAL_CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;
const CLAMP: f64 = 0.2;
/// Below this L2 mass a patch counts as uniform.
const FLAT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseDescriptor {
    /// Patch centre in pixels.
    pub cx: f64,
    pub cy: f64,
    pub patch_size: usize,
    /// Unit L2 norm, or all zeros for a uniform patch.
    pub vector: Vec<f64>,
}

/// Per-pixel gradient magnitude and hard orientation bin.
struct Gradients {
    width: usize,
    magnitude: Vec<f64>,
    bin: Vec<u8>,
}

impl Gradients {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut magnitude = vec![0.0; w * h];
        let mut bin = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let dx = img.get((x + 1).min(w - 1), y) - img.get(x.saturating_sub(1), y);
                let dy = img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1));
                let m = (dx * dx + dy * dy).sqrt();
                if m == 0.0 {
                    continue;
                }
                let mut angle = dy.atan2(dx);
                if angle < 0.0 {
                    angle += 2.0 * PI;
                }
                let b = ((angle / (2.0 * PI) * ORIENTATION_BINS as f64) as usize) % ORIENTATION_BINS;
                magnitude[y * w + x] = m;
                bin[y * w + x] = b as u8;
            }
        }
        Self { width: w, magnitude, bin }
    }

    fn describe(&self, x0: usize, y0: usize, size: usize) -> Vec<f64> {
        let mut v = vec![0.0; DESCRIPTOR_DIM];
        for v_off in 0..size {
            let cy = v_off * SPATIAL_CELLS / size;
            let row = (y0 + v_off) * self.width;
            for u_off in 0..size {
                let idx = row + x0 + u_off;
                let m = self.magnitude[idx];
                if m == 0.0 {
                    continue;
                }
                let cx = u_off * SPATIAL_CELLS / size;
                v[(cy * SPATIAL_CELLS + cx) * ORIENTATION_BINS + self.bin[idx] as usize] += m;
            }
        }
        if !normalize(&mut v) {
            return v;
        }
        for x in v.iter_mut() {
            *x = x.min(CLAMP);
        }
        normalize(&mut v);
        v
    }
}

/// L2-normalizes in place; zeroes the vector and returns false when flat.
fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < FLAT_EPS {
        v.iter_mut().for_each(|x| *x = 0.0);
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Dense gradient-orientation descriptors on a `step`-pixel lattice, one per
/// patch size and position with the patch fully inside the image.
///
/// Patch sizes larger than the image are skipped; the image must fit the
/// smallest one.
pub fn extract_dense_descriptors(img: &GrayImage, step: usize, patch_sizes: &[usize]) -> Result<Vec<DenseDescriptor>> {
    if step == 0 {
        return Err(Error::Config("descriptor step must be at least 1".into()));
    }
    let smallest = patch_sizes.iter().copied().min().ok_or_else(|| Error::Config("no patch sizes given".into()))?;
    if smallest == 0 {
        return Err(Error::Config("patch size must be at least 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    if smallest > w.min(h) {
        return Err(Error::ImageTooSmall { width: w, height: h, patch: smallest });
    }
    let grads = Gradients::new(img);
    let mut out = Vec::new();
    for &size in patch_sizes.iter().filter(|&&p| p <= w.min(h)) {
        for y0 in (0..=h - size).step_by(step) {
            for x0 in (0..=w - size).step_by(step) {
                out.push(DenseDescriptor {
                    cx: x0 as f64 + size as f64 / 2.0,
                    cy: y0 as f64 + size as f64 / 2.0,
                    patch_size: size,
                    vector: grads.describe(x0, y0, size),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        let px = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn constant_image_gives_zero_vectors() {
        let img = GrayImage::filled(32, 32, 0.4).unwrap();
        let d = extract_dense_descriptors(&img, 4, &[8, 16]).unwrap();
        assert!(!d.is_empty());
        assert!(d.iter().all(|d| d.vector.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn lattice_count() {
        let img = GrayImage::filled(64, 64, 0.0).unwrap();
        let d = extract_dense_descriptors(&img, 4, &[8]).unwrap();
        assert_eq!(d.len(), 15 * 15);
        assert_eq!((d[0].cx, d[0].cy), (4.0, 4.0));
        assert_eq!(d.last().map(|d| (d.cx, d.cy)), Some((60.0, 60.0)));
    }

    #[test]
    fn oversized_patches_are_skipped() {
        let img = GrayImage::filled(20, 20, 0.0).unwrap();
        let d = extract_dense_descriptors(&img, 4, &[8, 40]).unwrap();
        assert!(d.iter().all(|d| d.patch_size == 8));
        assert!(matches!(extract_dense_descriptors(&img, 4, &[24]), Err(Error::ImageTooSmall { patch: 24, .. })));
    }

    #[test]
    fn vertical_edge_uses_horizontal_bins() {
        let img = image_from_fn(32, 32, |x, _| if x < 16 { 0.1 } else { 0.9 });
        let descs = extract_dense_descriptors(&img, 4, &[8, 16]).unwrap();
        let mut touched = 0;
        for d in &descs {
            let total: f64 = d.vector.iter().sum();
            if total == 0.0 {
                continue;
            }
            touched += 1;
            let horizontal: f64 = d.vector.chunks(ORIENTATION_BINS).map(|c| c[0] + c[ORIENTATION_BINS / 2]).sum();
            assert!((horizontal - total).abs() < 1e-12);
            let norm: f64 = d.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!(touched > 0);
    }

    #[test]
    fn descriptors_are_clamped() {
        let img = image_from_fn(16, 16, |x, y| ((x * 7 + y * 13) % 5) as f64 / 4.0);
        for d in extract_dense_descriptors(&img, 4, &[8]).unwrap() {
            let norm: f64 = d.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            // After renormalizing, no component can be far above the clamp.
            assert!(d.vector.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
