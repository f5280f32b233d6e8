use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const CODEBOOK_MAGIC: &str = "EPMCB";
const CODEBOOK_VERSION: u32 = 1;

/// Visual-word centroids, stored row-major (`k` rows of `dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn from_centroids(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let dim = centroids.first().map(Vec::len).ok_or(Error::NoDescriptors)?;
        if let Some(bad) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
        }
        Ok(Self { k: centroids.len(), dim, centroids: centroids.concat() })
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, w: usize) -> &[f64] {
        &self.centroids[w * self.dim..(w + 1) * self.dim]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("{CODEBOOK_MAGIC} {CODEBOOK_VERSION} {} {}\n", self.k, self.dim);
        for w in 0..self.k {
            let row: Vec<String> = self.centroid(w).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", row.join(" ")).expect("write to String");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if header.first() != Some(&CODEBOOK_MAGIC) {
            return Err(Error::UnknownFormat(header.first().unwrap_or(&"").to_string()));
        }
        let num = |i: usize| -> Result<usize> {
            header.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Corrupt("codebook header".into()))
        };
        let version = num(1)? as u32;
        if version != CODEBOOK_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (k, dim) = (num(2)?, num(3)?);
        if k == 0 || dim == 0 {
            return Err(Error::Corrupt("empty codebook".into()));
        }
        let mut centroids = Vec::with_capacity(k * dim);
        for w in 0..k {
            let line = lines.next().ok_or_else(|| Error::Corrupt(format!("missing centroid {w}")))?;
            let before = centroids.len();
            for tok in line.split_whitespace() {
                centroids.push(tok.parse::<f64>().map_err(|_| Error::Corrupt(format!("bad value {tok:?}")))?);
            }
            if centroids.len() - before != dim {
                return Err(Error::Corrupt(format!("centroid {w} has wrong dimension")));
            }
        }
        Ok(Self { k, dim, centroids })
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid with its squared distance; ties go to the lowest index.
pub(crate) fn nearest(vector: &[f64], codebook: &Codebook) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for w in 0..codebook.k {
        let d = sq_dist(vector, codebook.centroid(w));
        if d < best.1 {
            best = (w, d);
        }
    }
    best
}

/// Index of the nearest centroid by Euclidean distance (lowest index on ties).
pub fn quantize(vector: &[f64], codebook: &Codebook) -> usize {
    debug_assert_eq!(vector.len(), codebook.dim);
    nearest(vector, codebook).0
}

/// Result of a k-means run.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops after `max_iters` assignment steps or once assignments stop
/// changing. A cluster left empty is re-seeded with the point farthest from
/// its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    let dim = points.first().map(Vec::len).ok_or(Error::NoDescriptors)?;
    if k == 0 {
        return Err(Error::Config("codebook size must be at least 1".into()));
    }
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut book = Codebook { k, dim, centroids: seed_plus_plus(points, k, &mut rng) };

    let n = points.len();
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut objective = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (w, d) = nearest(p, &book);
            changed |= assign[i] != w;
            assign[i] = w;
            dist[i] = d;
        }
        objective.push(dist.iter().sum());
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &w) in points.iter().zip(&assign) {
            counts[w] += 1;
            for (s, x) in sums[w * dim..(w + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for w in 0..k {
            let row = &mut book.centroids[w * dim..(w + 1) * dim];
            if counts[w] == 0 {
                // More empty clusters than points only happens when k > n.
                let p = far.next().unwrap_or(0);
                row.copy_from_slice(&points[p]);
            } else {
                let c = counts[w] as f64;
                for (r, s) in row.iter_mut().zip(&sums[w * dim..(w + 1) * dim]) {
                    *r = s / c;
                }
            }
        }
    }
    Ok(KMeansFit { codebook: book, objective })
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k * points[0].len());
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(&points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

pub fn learn_codebook(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    kmeans(points, k, max_iters, seed).map(|fit| fit.codebook)
}
