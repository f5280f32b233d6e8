//! Small labelled datasets whose class evidence sits in one image region.
//!
//! Every image, positive or negative, holds one diagonal-stripe patch and a
//! few horizontal or vertical stripe distractors on a flat background, so the
//! two classes have the same texture content overall. Only positives place
//! the diagonal patch at the canonical location; negatives put it elsewhere.
//! Global histograms therefore carry almost no class information while the
//! canonical region separates the classes perfectly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image_io::{save_pgm, DatasetManifest, GrayImage, Label, ManifestEntry};
use crate::{Error, Result};

const BACKGROUND: f64 = 0.5;
const DARK: f64 = 0.2;
const LIGHT: f64 = 0.8;
/// Stripe period in pixels.
const PERIOD: usize = 4;
/// Canonical patch centre as a fraction of the image side.
const CANONICAL_CENTRE: f64 = 0.3;
const PLACEMENT_ATTEMPTS: usize = 10_000;
/// Clearance between every patch and the image border, at least the largest
/// descriptor window, so a patch is covered by the same number of descriptor
/// windows wherever it lands.
const EDGE_MARGIN: usize = 16;
/// Clearance between patches.
const PATCH_GAP: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Side of the square images, in pixels.
    pub image_size: usize,
    /// Training images per class.
    pub num_train: usize,
    /// Test images per class.
    pub num_test: usize,
    pub signal_patch_size: usize,
    /// Maximum offset of the positive patch from its canonical position,
    /// per axis, in pixels.
    pub signal_jitter: usize,
    /// Amplitude of uniform pixel noise, in `[0, 1]`.
    pub noise_level: f64,
    /// Stripe distractors per image.
    pub distractor_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 96,
            num_train: 100,
            num_test: 100,
            signal_patch_size: 16,
            signal_jitter: 2,
            noise_level: 0.1,
            distractor_count: 2,
            seed: 0,
        }
    }
}

/// Manifests of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Texture {
    Diagonal,
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    size: usize,
}

impl Rect {
    /// Whether the two squares come closer than `gap` pixels.
    fn near(&self, other: &Rect, gap: usize) -> bool {
        self.x < other.x + other.size + gap
            && other.x < self.x + self.size + gap
            && self.y < other.y + other.size + gap
            && other.y < self.y + self.size + gap
    }
}

impl SynthConfig {
    fn canonical_origin(&self) -> usize {
        let centre = (CANONICAL_CENTRE * self.image_size as f64).round() as usize;
        centre.saturating_sub(self.signal_patch_size / 2)
    }

    /// Area reachable by the positive patch under any jitter.
    fn canonical_zone(&self) -> Rect {
        let o = self.canonical_origin() - self.signal_jitter;
        Rect { x: o, y: o, size: self.signal_patch_size + 2 * self.signal_jitter }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleGeometry(msg));
        let (size, patch, jitter) = (self.image_size, self.signal_patch_size, self.signal_jitter);
        if patch == 0 || size == 0 {
            return fail("image and patch sizes must be positive".into());
        }
        if self.num_train == 0 || self.num_test == 0 {
            return Err(Error::Config("each split needs at least one image per class".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config("noise_level must lie in [0, 1]".into()));
        }
        let centre = (CANONICAL_CENTRE * size as f64).round() as usize;
        if centre < patch / 2 + jitter + EDGE_MARGIN || centre - patch / 2 + patch + jitter + EDGE_MARGIN > size {
            return fail(format!(
                "a {patch}px patch with {jitter}px jitter and {EDGE_MARGIN}px border clearance does not fit a {size}px image"
            ));
        }
        Ok(())
    }
}

fn texture_value(texture: Texture, u: usize, v: usize) -> f64 {
    let phase = match texture {
        Texture::Diagonal => u + v,
        Texture::Horizontal => v,
        Texture::Vertical => u,
    };
    if (phase / (PERIOD / 2)).is_multiple_of(2) {
        DARK
    } else {
        LIGHT
    }
}

fn paint(img: &mut GrayImage, rect: Rect, texture: Texture) {
    for v in 0..rect.size {
        for u in 0..rect.size {
            img.set(rect.x + u, rect.y + v, texture_value(texture, u, v));
        }
    }
}

/// Draws a square inside the border clearance and away from everything in
/// `taken`.
fn place(rng: &mut ChaCha8Rng, image_size: usize, size: usize, taken: &[Rect]) -> Result<Rect> {
    let (lo, hi) = (EDGE_MARGIN, image_size - EDGE_MARGIN - size);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let r = Rect { x: rng.gen_range(lo..=hi), y: rng.gen_range(lo..=hi), size };
        if taken.iter().all(|t| !t.near(&r, PATCH_GAP)) {
            return Ok(r);
        }
    }
    Err(Error::InfeasibleGeometry(format!(
        "could not place {} separated {size}px patches in a {image_size}px image",
        taken.len()
    )))
}

fn render(cfg: &SynthConfig, label: Label, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let size = cfg.image_size;
    let patch = cfg.signal_patch_size;
    let mut img = GrayImage::filled(size, size, BACKGROUND)?;
    let zone = cfg.canonical_zone();
    let mut taken = vec![zone];

    let signal = if label.is_positive() {
        let j = cfg.signal_jitter as i64;
        let o = cfg.canonical_origin() as i64;
        let x = (o + rng.gen_range(-j..=j)) as usize;
        let y = (o + rng.gen_range(-j..=j)) as usize;
        Rect { x, y, size: patch }
    } else {
        let r = place(rng, size, patch, &taken)?;
        taken.push(r);
        r
    };
    paint(&mut img, signal, Texture::Diagonal);

    for _ in 0..cfg.distractor_count {
        let r = place(rng, size, patch, &taken)?;
        taken.push(r);
        let texture = if rng.gen_bool(0.5) { Texture::Horizontal } else { Texture::Vertical };
        paint(&mut img, r, texture);
    }

    if cfg.noise_level > 0.0 {
        for y in 0..size {
            for x in 0..size {
                let n = rng.gen_range(-cfg.noise_level..=cfg.noise_level);
                img.set(x, y, img.get(x, y) + n);
            }
        }
    }
    Ok(img)
}

fn write_split(
    cfg: &SynthConfig,
    out_dir: &Path,
    split: &str,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetManifest> {
    let image_dir = out_dir.join(split);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut entries = Vec::with_capacity(2 * per_class);
    for i in 0..per_class {
        for (label, tag) in [(Label::Positive, "pos"), (Label::Negative, "neg")] {
            let img = render(cfg, label, rng)?;
            let rel = PathBuf::from(split).join(format!("{tag}_{i:04}.pgm"));
            save_pgm(&img, out_dir.join(&rel))?;
            entries.push(ManifestEntry { path: rel, label, bbox: None });
        }
    }
    let manifest = DatasetManifest { class_name: "synthetic".into(), base_dir: out_dir.to_path_buf(), entries };
    manifest.write(out_dir.join(format!("{split}.txt")))?;
    Ok(manifest)
}

/// Writes `train/` and `test/` P5 images under `out_dir`, plus the manifests
/// `train.txt` and `test.txt`. Output depends only on `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SyntheticSplits> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = write_split(cfg, out_dir, "train", cfg.num_train, &mut rng)?;
    let test = write_split(cfg, out_dir, "test", cfg.num_test, &mut rng)?;
    Ok(SyntheticSplits { train, test })
}
