//! Fractional part boxes on a regular lattice.

use rand::Rng;

use crate::{Error, Result};

/// Tolerance for deciding that a fraction sits on a lattice point.
const LATTICE_EPS: f64 = 1e-9;

/// Axis-aligned box in fractions of image width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartLocation {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PartLocation {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(x1) && in_unit(y1) && in_unit(x2) && in_unit(y2)) || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidLocation(format!("({x1}, {y1}, {x2}, {y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub const FULL: PartLocation = PartLocation { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 };

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union of two boxes; 0 when they are disjoint.
pub fn iou(a: &PartLocation, b: &PartLocation) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

/// Uniform lattice with `s` points across and `t` points down, i.e.
/// `(s - 1) x (t - 1)` cells. Point `i` sits at fraction `i / (s - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    s: usize,
    t: usize,
}

impl Default for Grid {
    /// 17 x 17 lattice points, 16 x 16 cells.
    fn default() -> Self {
        Self { s: 17, t: 17 }
    }
}

impl Grid {
    pub fn new(s: usize, t: usize) -> Result<Self> {
        if s < 2 || t < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 lattice points, got {s}x{t}")));
        }
        Ok(Self { s, t })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn cells_x(&self) -> usize {
        self.s - 1
    }

    pub fn cells_y(&self) -> usize {
        self.t - 1
    }

    pub fn lattice_x(&self, i: usize) -> f64 {
        i as f64 / self.cells_x() as f64
    }

    pub fn lattice_y(&self, j: usize) -> f64 {
        j as f64 / self.cells_y() as f64
    }

    pub fn location(&self, i: usize, j: usize, k: usize, l: usize) -> PartLocation {
        debug_assert!(i < k && k < self.s && j < l && l < self.t);
        PartLocation { x1: self.lattice_x(i), y1: self.lattice_y(j), x2: self.lattice_x(k), y2: self.lattice_y(l) }
    }

    /// Lattice indices `[i, j, k, l]` of a grid-aligned box.
    pub fn indices(&self, loc: &PartLocation) -> Result<[usize; 4]> {
        let on_lattice = |f: f64, cells: usize| -> Option<usize> {
            let scaled = f * cells as f64;
            let idx = scaled.round();
            ((scaled - idx).abs() <= LATTICE_EPS * cells as f64 && (0.0..=cells as f64).contains(&idx))
                .then_some(idx as usize)
        };
        let (cx, cy) = (self.cells_x(), self.cells_y());
        match (on_lattice(loc.x1, cx), on_lattice(loc.y1, cy), on_lattice(loc.x2, cx), on_lattice(loc.y2, cy)) {
            (Some(i), Some(j), Some(k), Some(l)) if i < k && j < l => Ok([i, j, k, l]),
            _ => Err(Error::NotGridAligned(loc.as_array())),
        }
    }

    pub fn is_aligned(&self, loc: &PartLocation) -> bool {
        self.indices(loc).is_ok()
    }
}

/// Nearest lattice index for a fraction; exact midpoints go to the lower one.
fn nearest_index(f: f64, cells: usize) -> usize {
    let idx = (f * cells as f64 - 0.5).ceil();
    idx.clamp(0.0, cells as f64) as usize
}

/// Snaps every coordinate to its nearest lattice fraction.
///
/// If snapping collapses a dimension, the far edge moves one lattice step
/// up, or the near edge one step down when already at the last point.
pub fn align_to_grid(loc: &PartLocation, grid: &Grid) -> PartLocation {
    let snap = |a: f64, b: f64, cells: usize| -> (usize, usize) {
        let lo = nearest_index(a, cells);
        let hi = nearest_index(b, cells);
        if lo < hi {
            (lo, hi)
        } else if hi < cells {
            (lo, lo + 1)
        } else {
            (cells - 1, cells)
        }
    };
    let (i, k) = snap(loc.x1, loc.x2, grid.cells_x());
    let (j, l) = snap(loc.y1, loc.y2, grid.cells_y());
    grid.location(i, j, k, l)
}

/// Index pairs `(lo, hi)` with `hi - lo >= min_cells` on an axis of `cells` cells.
fn spans(cells: usize, min_cells: usize) -> Vec<(usize, usize)> {
    (0..=cells).flat_map(|lo| (lo + min_cells..=cells).map(move |hi| (lo, hi))).collect()
}

/// Draws `n` grid-aligned boxes spanning at least `min_cells` cells in each
/// direction, uniformly over valid lattice index tuples.
pub fn sample_candidate_locations<R: Rng + ?Sized>(
    grid: &Grid,
    n: usize,
    min_cells: usize,
    rng: &mut R,
) -> Result<Vec<PartLocation>> {
    if n == 0 {
        return Err(Error::Config("candidate count must be at least 1".into()));
    }
    if min_cells == 0 || min_cells > grid.cells_x() || min_cells > grid.cells_y() {
        return Err(Error::ImpossibleSpan { min_cells });
    }
    let xs = spans(grid.cells_x(), min_cells);
    let ys = spans(grid.cells_y(), min_cells);
    Ok((0..n)
        .map(|_| {
            let (i, k) = xs[rng.gen_range(0..xs.len())];
            let (j, l) = ys[rng.gen_range(0..ys.len())];
            grid.location(i, j, k, l)
        })
        .collect())
}
