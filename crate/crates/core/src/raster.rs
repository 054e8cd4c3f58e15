//! Raster grids and polygon rasterization in image coordinates.
//!
//! Pixel (row `i`, col `j`) covers the half-open square
//! `[j, j+1) x [i, i+1)` in continuous `(rg, az)` coordinates, so its center
//! sits at `(j + 0.5, i + 0.5)`. A pixel belongs to a polygon iff its center
//! is inside under the even-odd rule. The scanline filler and the per-point
//! test share one crossing formula, so they classify every pixel identically.

use serde::{Deserialize, Serialize};

/// Grid dimensions: `rows` along azimuth, `cols` along slant range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
}

impl Dims {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major f32 raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid32 {
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl Grid32 {
    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Self {
        assert_eq!(dims.len(), data.len(), "raster size mismatch");
        Self { dims, data }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.dims.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.dims.cols + col] = v;
    }

    /// Copy the `dims`-sized window with top-left pixel `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, dims: Dims) -> Grid32 {
        assert!(row0 + dims.rows <= self.dims.rows && col0 + dims.cols <= self.dims.cols);
        let mut data = Vec::with_capacity(dims.len());
        for r in 0..dims.rows {
            let start = (row0 + r) * self.dims.cols + col0;
            data.extend_from_slice(&self.data[start..start + dims.cols]);
        }
        Grid32 { dims, data }
    }
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitmap {
    pub dims: Dims,
    pub data: Vec<bool>,
}

impl Bitmap {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![false; dims.len()],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> bool {
        self.data[row * self.dims.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize) {
        self.data[row * self.dims.cols + col] = true;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn or_with(&mut self, other: &Bitmap) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Tight bounding rectangle of the set pixels:
    /// `(row_min, row_max, col_min, col_max)`, inclusive.
    pub fn support(&self) -> Option<(usize, usize, usize, usize)> {
        let mut out: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.dims.rows {
            for c in 0..self.dims.cols {
                if self.at(r, c) {
                    out = Some(match out {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
            }
        }
        out
    }
}

/// Polygon in continuous image coordinates `(x = rg, y = az)`, open ring.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub pts: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(pts: Vec<(f64, f64)>) -> Self {
        Self { pts }
    }

    /// Shoelace signed area; positive for counter-clockwise rings in a frame
    /// with x right and y up.
    pub fn signed_area(&self) -> f64 {
        let n = self.pts.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x0, y0) = self.pts[i];
            let (x1, y1) = self.pts[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        0.5 * acc
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.pts {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(y);
            b.3 = b.3.max(y);
        }
        b
    }

    /// Even-odd point containment. Shares the crossing formula with
    /// [`row_crossings`], so scanline filling agrees with it exactly.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = self.pts.len();
        for i in 0..n {
            let (x0, y0) = self.pts[i];
            let (x1, y1) = self.pts[(i + 1) % n];
            if (y0 > y) != (y1 > y) && x < crossing_x(x0, y0, x1, y1, y) {
                inside = !inside;
            }
        }
        inside
    }

    /// Sorted x-coordinates where polygon edges cross the horizontal line at
    /// `y`; the count is always even.
    pub fn row_crossings(&self, y: f64) -> Vec<f64> {
        let n = self.pts.len();
        let mut xs = Vec::new();
        for i in 0..n {
            let (x0, y0) = self.pts[i];
            let (x1, y1) = self.pts[(i + 1) % n];
            if (y0 > y) != (y1 > y) {
                xs.push(crossing_x(x0, y0, x1, y1, y));
            }
        }
        xs.sort_by(f64::total_cmp);
        xs
    }

    /// True iff the ring has no zero-length edges, no fold-back spikes, and no
    /// crossing between non-adjacent edges.
    pub fn is_simple(&self) -> bool {
        let n = self.pts.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let a = self.pts[i];
            let b = self.pts[(i + 1) % n];
            if a == b {
                return false;
            }
            let c = self.pts[(i + 2) % n];
            // Spike: b-a and c-b collinear but opposed.
            let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
            let dot = (b.0 - a.0) * (c.0 - b.0) + (b.1 - a.1) * (c.1 - b.1);
            if cross == 0.0 && dot < 0.0 {
                return false;
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip adjacent edges (they share exactly one endpoint).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (p1, p2) = (self.pts[i], self.pts[(i + 1) % n]);
                let (p3, p4) = (self.pts[j], self.pts[(j + 1) % n]);
                if segments_intersect(p1, p2, p3, p4) {
                    return false;
                }
            }
        }
        true
    }
}

#[inline]
fn crossing_x(x0: f64, y0: f64, x1: f64, y1: f64, y: f64) -> f64 {
    x0 + (y - y0) * (x1 - x0) / (y1 - y0)
}

fn orient(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
    (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
}

fn on_segment(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> bool {
    r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
}

/// Inclusive segment intersection test (touching counts).
pub fn segments_intersect(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64), p4: (f64, f64)) -> bool {
    let d1 = orient(p3, p4, p1);
    let d2 = orient(p3, p4, p2);
    let d3 = orient(p1, p2, p3);
    let d4 = orient(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p4, p1))
        || (d2 == 0.0 && on_segment(p3, p4, p2))
        || (d3 == 0.0 && on_segment(p1, p2, p3))
        || (d4 == 0.0 && on_segment(p1, p2, p4))
}

/// Pixel window in a larger grid: top-left pixel `(row0, col0)` plus size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelWindow {
    pub row0: i64,
    pub col0: i64,
    pub dims: Dims,
}

impl PixelWindow {
    pub fn full(dims: Dims) -> Self {
        Self {
            row0: 0,
            col0: 0,
            dims,
        }
    }

    /// Smallest window whose pixel centers can fall inside the given
    /// continuous bounds, clipped to `grid`.
    pub fn covering(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64, grid: Dims) -> Self {
        let col0 = ((x_lo - 0.5).floor() as i64).max(0);
        let row0 = ((y_lo - 0.5).floor() as i64).max(0);
        let col1 = ((x_hi + 0.5).ceil() as i64).min(grid.cols as i64);
        let row1 = ((y_hi + 0.5).ceil() as i64).min(grid.rows as i64);
        Self {
            row0,
            col0,
            dims: Dims::new((row1 - row0).max(0) as usize, (col1 - col0).max(0) as usize),
        }
    }
}

/// Scanline even-odd fill of `poly` over a pixel window. The output bitmap is
/// window-local; pixel `(r, c)` of the result is grid pixel
/// `(window.row0 + r, window.col0 + c)`, tested at its global center.
pub fn fill_polygon(poly: &Polygon, window: PixelWindow) -> Bitmap {
    let mut mask = Bitmap::zeros(window.dims);
    for r in 0..window.dims.rows {
        let y = (window.row0 + r as i64) as f64 + 0.5;
        let xs = poly.row_crossings(y);
        for pair in xs.chunks_exact(2) {
            let (x_lo, x_hi) = (pair[0], pair[1]);
            // Centers j + 0.5 with x_lo <= j + 0.5 < x_hi.
            let j_min = (x_lo - 0.5).ceil() as i64;
            let j_max = (x_hi - 0.5).ceil() as i64 - 1;
            let c_min = (j_min - window.col0).max(0);
            let c_max = (j_max - window.col0).min(window.dims.cols as i64 - 1);
            for c in c_min..=c_max {
                mask.set(r, c as usize);
            }
        }
    }
    mask
}

/// Distance from point `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}
