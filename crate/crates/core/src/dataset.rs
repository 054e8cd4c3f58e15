//! Reference-data workflow: from building records and a rendered scene to
//! training/testing samples.
//!
//! Per building: rasterize the projected footprint into a binary mask, take
//! the tight footprint bounding box over the projected vertices, extend it
//! up-range by the layover length into the building bounding box, drop boxes
//! whose image content looks stale (mean intensity below the scene's
//! intensity mode), crop fixed-size patches on a stride grid, keep the
//! (building, patch) pairs whose mask support and ground-truth box fall
//! strictly inside the patch, normalize amplitudes with percentiles of the
//! training pixels, and split buildings spatially along azimuth.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::geometry::{layover_px, project, SensorModel, WorldPoint};
use crate::raster::{fill_polygon, Bitmap, Dims, Grid32, PixelWindow, Polygon};
use crate::seedmix;
use crate::simulate::{BuildingRecord, Scene, SimulateError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("building {0}: footprint projects entirely outside the grid")]
    FootprintOutsideGrid(String),
    #[error("footprint is empty")]
    EmptyFootprint,
    #[error("patch size {patch} exceeds scene dims {rows}x{cols}")]
    PatchTooLarge {
        patch: usize,
        rows: usize,
        cols: usize,
    },
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("normalization percentiles collapsed (lo {lo} >= hi {hi})")]
    DegenerateNormalization { lo: f64, hi: f64 },
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    BadSplitFraction(f64),
    #[error("split produced an empty {0} side")]
    EmptySplitSide(&'static str),
    #[error("positioning error mean must be positive, sigma non-negative")]
    BadErrorModel,
    #[error("dataset has no samples")]
    Empty,
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Bbox(#[from] crate::bbox::BboxError),
}

/// Which side of the spatial split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Project the footprint ring of a building into image coordinates at the
/// given height.
fn projected_ring(
    b: &BuildingRecord,
    sensor: &SensorModel,
    z: f64,
) -> Result<Polygon, DatasetError> {
    let mut pts = Vec::with_capacity(b.footprint.len());
    for v in &b.footprint {
        let p = project(WorldPoint::new(v[0], v[1], z), sensor)?;
        pts.push((p.rg, p.az));
    }
    Ok(Polygon::new(pts))
}

/// Binary footprint mask over the full scene grid: pixel centers inside the
/// projected base polygon under the even-odd rule.
pub fn rasterize_footprint(
    b: &BuildingRecord,
    sensor: &SensorModel,
    dims: Dims,
) -> Result<Bitmap, DatasetError> {
    b.validate()?;
    let poly = projected_ring(b, sensor, 0.0)?;
    let (x_lo, x_hi, y_lo, y_hi) = poly.bounds();
    if x_hi < 0.0 || y_hi < 0.0 || x_lo > dims.cols as f64 || y_lo > dims.rows as f64 {
        return Err(DatasetError::FootprintOutsideGrid(b.id.clone()));
    }
    Ok(fill_polygon(&poly, PixelWindow::full(dims)))
}

/// Tight axis-aligned box over the projected footprint vertices, in
/// continuous pixel coordinates (not mask-quantized).
pub fn footprint_bbox(b: &BuildingRecord, sensor: &SensorModel) -> Result<BBox, DatasetError> {
    b.validate()?;
    let poly = projected_ring(b, sensor, 0.0)?;
    if poly.pts.is_empty() {
        return Err(DatasetError::EmptyFootprint);
    }
    Ok(BBox::from_points(&poly.pts)?)
}

/// Building bounding box from the footprint box and the building height:
/// the box widens up-range by the layover length `L = layover_px(h)` while
/// the azimuth extent stays put:
///
/// ```text
/// rg_b = rg_f - L/2,  az_b = az_f,  L_b = L + L_f,  w_b = w_f
/// ```
pub fn building_bbox(fb: &BBox, h: f64, sensor: &SensorModel) -> Result<BBox, DatasetError> {
    let l = layover_px(h, sensor)?;
    Ok(BBox::new(fb.cx - 0.5 * l, fb.cy, fb.w + l, fb.h)?)
}

/// Result of the stale-building filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    /// Intensity threshold: the center of the fullest histogram bin.
    pub threshold: f64,
    /// Ids whose box mean intensity fell below the threshold.
    pub dropped: Vec<String>,
}

/// Mode of the intensity (amplitude squared) image: the center of the
/// maximal bin of a histogram over `[min, max]`. A constant image returns
/// that constant.
pub fn intensity_mode(amplitude: &Grid32, bins: usize) -> f64 {
    let bins = bins.max(1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &a in &amplitude.data {
        let v = (a as f64) * (a as f64);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &a in &amplitude.data {
        let v = (a as f64) * (a as f64);
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mode_bin = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    lo + (mode_bin as f64 + 0.5) * width
}

/// Mean intensity over the pixels whose centers fall inside `bx` (clipped to
/// the grid). An empty pixel set counts as zero intensity.
fn box_mean_intensity(amplitude: &Grid32, bx: &BBox) -> f64 {
    let dims = amplitude.dims;
    let c0 = ((bx.x_lo() - 0.5).ceil() as i64).max(0);
    let c1 = ((bx.x_hi() - 0.5).floor() as i64).min(dims.cols as i64 - 1);
    let r0 = ((bx.y_lo() - 0.5).ceil() as i64).max(0);
    let r1 = ((bx.y_hi() - 0.5).floor() as i64).min(dims.rows as i64 - 1);
    if c1 < c0 || r1 < r0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut n = 0u64;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let a = amplitude.at(r as usize, c as usize) as f64;
            sum += a * a;
            n += 1;
        }
    }
    sum / n as f64
}

/// Drop ground-truth boxes whose mean intensity falls below the scene's
/// intensity mode — the SAR image shows no building there (urban change
/// between the image and the footprint database). Idempotent: the threshold
/// depends only on the scene.
pub fn filter_stale(
    boxes: &[(String, BBox)],
    scene: &Scene,
    bins: usize,
) -> (Vec<(String, BBox)>, FilterReport) {
    let threshold = intensity_mode(&scene.amplitude, bins);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (id, bx) in boxes {
        if box_mean_intensity(&scene.amplitude, bx) < threshold {
            dropped.push(id.clone());
        } else {
            kept.push((id.clone(), *bx));
        }
    }
    (kept, FilterReport { threshold, dropped })
}

/// Rigidly translate each footprint by a random planar offset: magnitude
/// drawn from `N(mu, sigma^2)` resampled until positive, direction an integer
/// number of degrees from the ground-range axis, uniform over `[0, 359]`.
/// Heights are untouched. Draws are keyed per building id, so the result does
/// not depend on slice order or parallel scheduling.
pub fn inject_positioning_errors(
    buildings: &[BuildingRecord],
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<BuildingRecord>, DatasetError> {
    if !(mu.is_finite() && mu > 0.0 && sigma.is_finite() && sigma >= 0.0) {
        return Err(DatasetError::BadErrorModel);
    }
    let normal = Normal::new(mu, sigma).map_err(|_| DatasetError::BadErrorModel)?;
    let mut out = Vec::with_capacity(buildings.len());
    for b in buildings {
        let mut rng = seedmix::stream_rng(seed, seedmix::fnv1a64(&b.id));
        let magnitude = loop {
            let m = normal.sample(&mut rng);
            if m > 0.0 {
                break m;
            }
        };
        let alpha_deg = rng.gen_range(0u32..360) as f64;
        let (dy, dx) = alpha_deg.to_radians().sin_cos();
        out.push(b.translated(magnitude * dx, magnitude * dy));
    }
    Ok(out)
}

/// Spatial split assignment plus bookkeeping.
#[derive(Debug, Clone)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    /// Buildings inside the guard band, excluded from both sides.
    pub excluded: Vec<String>,
    /// Azimuth coordinate of the split boundary.
    pub boundary: f64,
}

/// Partition buildings by their azimuth center at the `fraction` quantile.
/// Buildings within `guard_px` of the boundary are excluded from both sides,
/// which keeps the two regions from sharing image content.
pub fn split_by_azimuth(
    centers: &[(String, f64)],
    fraction: f64,
    guard_px: f64,
) -> Result<SplitAssignment, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::BadSplitFraction(fraction));
    }
    if centers.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut az: Vec<f64> = centers.iter().map(|(_, a)| *a).collect();
    az.sort_by(f64::total_cmp);
    // Nearest-rank quantile.
    let rank = ((fraction * az.len() as f64).ceil() as usize).clamp(1, az.len());
    let boundary = az[rank - 1];

    let mut assignments = BTreeMap::new();
    let mut excluded = Vec::new();
    let (mut n_train, mut n_test) = (0usize, 0usize);
    for (id, a) in centers {
        if *a <= boundary - guard_px {
            assignments.insert(id.clone(), Split::Train);
            n_train += 1;
        } else if *a > boundary + guard_px {
            assignments.insert(id.clone(), Split::Test);
            n_test += 1;
        } else {
            excluded.push(id.clone());
        }
    }
    if n_train == 0 {
        return Err(DatasetError::EmptySplitSide("train"));
    }
    if n_test == 0 {
        return Err(DatasetError::EmptySplitSide("test"));
    }
    Ok(SplitAssignment {
        assignments,
        excluded,
        boundary,
    })
}

/// Normalization constants: the 1st and 99th percentile of the training
/// amplitudes, stored in the manifest and reused verbatim at test time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub lo: f64,
    pub hi: f64,
}

/// Nearest-rank percentile of the pooled training pixels.
fn percentile(values: &mut [f32], p: f64) -> f64 {
    let rank = ((p / 100.0 * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f32::total_cmp);
    *v as f64
}

pub fn normalization_constants(train_pixels: &mut Vec<f32>) -> Result<NormConstants, DatasetError> {
    if train_pixels.is_empty() {
        return Err(DatasetError::Empty);
    }
    let lo = percentile(train_pixels, 1.0);
    let hi = percentile(train_pixels, 99.0);
    if !(hi > lo) {
        return Err(DatasetError::DegenerateNormalization { lo, hi });
    }
    Ok(NormConstants { lo, hi })
}

/// Map a raw amplitude into `[0, 1]` with the stored constants.
pub fn normalize_value(a: f32, n: &NormConstants) -> f32 {
    (((a as f64) - n.lo) / (n.hi - n.lo)).clamp(0.0, 1.0) as f32
}

pub fn normalize_grid(g: &mut Grid32, n: &NormConstants) {
    for v in &mut g.data {
        *v = normalize_value(*v, n);
    }
}

/// One training/testing unit: an image patch, the matching footprint mask,
/// both boxes in patch-local coordinates, and the true height.
#[derive(Debug, Clone)]
pub struct Sample {
    pub building_id: String,
    /// Scene pixel of the patch top-left corner, `(row, col)`.
    pub patch_origin: (usize, usize),
    pub split: Split,
    pub footprint_box: BBox,
    pub gt_box: BBox,
    pub true_height: f64,
    pub patch: Grid32,
    pub mask: Grid32,
}

/// Per-building image geometry shared by cropping and box generation.
pub struct BuildingGeometry {
    pub id: String,
    pub height: f64,
    /// Footprint box in scene coordinates.
    pub fb: BBox,
    /// Building (ground-truth) box in scene coordinates.
    pub gt: BBox,
    mask_window: PixelWindow,
    mask_local: Bitmap,
    /// Global support rectangle of the rasterized mask, inclusive.
    support: Option<(usize, usize, usize, usize)>,
}

impl BuildingGeometry {
    pub fn compute(
        b: &BuildingRecord,
        sensor: &SensorModel,
        dims: Dims,
    ) -> Result<Self, DatasetError> {
        let fb = footprint_bbox(b, sensor)?;
        let gt = building_bbox(&fb, b.height, sensor)?;
        let poly = projected_ring(b, sensor, 0.0)?;
        let (x_lo, x_hi, y_lo, y_hi) = poly.bounds();
        if x_hi < 0.0 || y_hi < 0.0 || x_lo > dims.cols as f64 || y_lo > dims.rows as f64 {
            return Err(DatasetError::FootprintOutsideGrid(b.id.clone()));
        }
        let window = PixelWindow::covering(x_lo, x_hi, y_lo, y_hi, dims);
        let mask_local = fill_polygon(&poly, window);
        let support = mask_local.support().map(|(r0, r1, c0, c1)| {
            (
                r0 + window.row0 as usize,
                r1 + window.row0 as usize,
                c0 + window.col0 as usize,
                c1 + window.col0 as usize,
            )
        });
        Ok(Self {
            id: b.id.clone(),
            height: b.height,
            fb,
            gt,
            mask_window: window,
            mask_local,
            support,
        })
    }

    pub fn mask_is_empty(&self) -> bool {
        self.support.is_none()
    }

    /// Cut the patch-local footprint mask for a patch at `(row0, col0)`.
    pub fn cut_mask(&self, row0: usize, col0: usize, patch: usize) -> Grid32 {
        let mut out = Grid32::filled(Dims::new(patch, patch), 0.0);
        let w = self.mask_window;
        for r in 0..w.dims.rows {
            let gr = w.row0 as usize + r;
            if gr < row0 || gr >= row0 + patch {
                continue;
            }
            for c in 0..w.dims.cols {
                let gc = w.col0 as usize + c;
                if gc < col0 || gc >= col0 + patch {
                    continue;
                }
                if self.mask_local.at(r, c) {
                    out.set(gr - row0, gc - col0, 1.0);
                }
            }
        }
        out
    }

    /// True iff the mask support keeps off the patch border ring and the
    /// ground-truth box sits strictly inside the patch extent.
    fn fits_patch(&self, row0: usize, col0: usize, patch: usize) -> bool {
        let Some((r0, r1, c0, c1)) = self.support else {
            return false;
        };
        let inner = r0 > row0 && r1 + 1 < row0 + patch && c0 > col0 && c1 + 1 < col0 + patch;
        let gt_inside = self.gt.x_lo() > col0 as f64
            && self.gt.x_hi() < (col0 + patch) as f64
            && self.gt.y_lo() > row0 as f64
            && self.gt.y_hi() < (row0 + patch) as f64;
        inner && gt_inside
    }
}

/// Patch grid origins: `(i * stride, j * stride)` for every patch fully
/// inside the scene; `floor((dim - patch) / stride) + 1` per axis.
pub fn patch_origins(
    dims: Dims,
    patch: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>, DatasetError> {
    if stride == 0 {
        return Err(DatasetError::ZeroStride);
    }
    if patch > dims.rows || patch > dims.cols {
        return Err(DatasetError::PatchTooLarge {
            patch,
            rows: dims.rows,
            cols: dims.cols,
        });
    }
    let nr = (dims.rows - patch) / stride + 1;
    let nc = (dims.cols - patch) / stride + 1;
    let mut out = Vec::with_capacity(nr * nc);
    for i in 0..nr {
        for j in 0..nc {
            out.push((i * stride, j * stride));
        }
    }
    Ok(out)
}

fn to_local(bx: &BBox, row0: usize, col0: usize) -> BBox {
    BBox {
        cx: bx.cx - col0 as f64,
        cy: bx.cy - row0 as f64,
        ..*bx
    }
}

/// Candidate `(building, patch)` pairs for one building; train keeps all of
/// them (overlapping crops act as translation augmentation), test keeps the
/// single patch whose center is nearest the building center, ties broken by
/// smaller origin (row, then col).
fn candidate_origins(
    geom: &BuildingGeometry,
    origins: &[(usize, usize)],
    patch: usize,
    split: Split,
) -> Vec<(usize, usize)> {
    let mut fits: Vec<(usize, usize)> = origins
        .iter()
        .copied()
        .filter(|&(r, c)| geom.fits_patch(r, c, patch))
        .collect();
    if split == Split::Test && fits.len() > 1 {
        let half = patch as f64 / 2.0;
        let key = |&(r, c): &(usize, usize)| {
            let dy = r as f64 + half - geom.gt.cy;
            let dx = c as f64 + half - geom.gt.cx;
            dx * dx + dy * dy
        };
        let best = fits
            .iter()
            .map(|o| (key(o), o.0, o.1))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
            .unwrap();
        fits = vec![(best.1, best.2)];
    }
    fits
}

/// Parameters of the dataset build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetParams {
    pub patch_size: usize,
    pub stride: usize,
    pub split_fraction: f64,
    pub guard_px: f64,
    /// Bin count for the intensity-mode estimator.
    pub histogram_bins: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            patch_size: 256,
            stride: 150,
            split_fraction: 0.8,
            guard_px: 0.0,
            histogram_bins: 256,
        }
    }
}

/// Everything the dataset build produces, with rasters still in memory.
pub struct BuiltDataset {
    pub sensor: SensorModel,
    pub params: DatasetParams,
    pub normalization: NormConstants,
    pub samples: Vec<Sample>,
    pub filter_report: FilterReport,
    /// Surviving buildings that no patch fully contains.
    pub uncovered: Vec<String>,
    /// Buildings dropped by the split guard band.
    pub excluded_by_guard: Vec<String>,
}

/// Run the full reference-data workflow over a rendered scene.
///
/// `footprint_source` lets the footprints used for masks and boxes differ
/// from the ones that produced the scene (positioning-error studies); pass
/// `scene.buildings` for the clean case.
pub fn build_dataset(
    scene: &Scene,
    footprint_source: &[BuildingRecord],
    params: &DatasetParams,
) -> Result<BuiltDataset, DatasetError> {
    let dims = scene.amplitude.dims;
    let origins = patch_origins(dims, params.patch_size, params.stride)?;

    // Geometry per building, in input order.
    let mut geoms = Vec::with_capacity(footprint_source.len());
    for b in footprint_source {
        geoms.push(BuildingGeometry::compute(b, &scene.sensor, dims)?);
    }

    // Stale filter over ground-truth boxes.
    let boxes: Vec<(String, BBox)> = geoms.iter().map(|g| (g.id.clone(), g.gt)).collect();
    let (kept, filter_report) = filter_stale(&boxes, scene, params.histogram_bins);
    let kept_ids: std::collections::BTreeSet<&str> =
        kept.iter().map(|(id, _)| id.as_str()).collect();
    let geoms: Vec<BuildingGeometry> = geoms
        .into_iter()
        .filter(|g| kept_ids.contains(g.id.as_str()))
        .collect();

    // Spatial split on azimuth centers.
    let centers: Vec<(String, f64)> = geoms.iter().map(|g| (g.id.clone(), g.gt.cy)).collect();
    let split = split_by_azimuth(&centers, params.split_fraction, params.guard_px)?;

    // Enumerate samples, building-major, patch origins row-major.
    let mut samples = Vec::new();
    let mut uncovered = Vec::new();
    for geom in &geoms {
        let Some(side) = split.assignments.get(&geom.id).copied() else {
            continue;
        };
        let chosen = candidate_origins(geom, &origins, params.patch_size, side);
        if chosen.is_empty() {
            uncovered.push(geom.id.clone());
            continue;
        }
        for (r0, c0) in chosen {
            let patch_dims = Dims::new(params.patch_size, params.patch_size);
            let patch = scene.amplitude.crop(r0, c0, patch_dims);
            let mask = geom.cut_mask(r0, c0, params.patch_size);
            samples.push(Sample {
                building_id: geom.id.clone(),
                patch_origin: (r0, c0),
                split: side,
                footprint_box: to_local(&geom.fb, r0, c0),
                gt_box: to_local(&geom.gt, r0, c0),
                true_height: geom.height,
                patch,
                mask,
            });
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }

    // Percentile normalization from the training pixels only.
    let mut train_pixels: Vec<f32> = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .flat_map(|s| s.patch.data.iter().copied())
        .collect();
    let normalization = normalization_constants(&mut train_pixels)?;
    drop(train_pixels);
    for s in &mut samples {
        normalize_grid(&mut s.patch, &normalization);
    }

    Ok(BuiltDataset {
        sensor: scene.sensor,
        params: params.clone(),
        normalization,
        samples,
        filter_report,
        uncovered,
        excluded_by_guard: split.excluded,
    })
}
