//! Synthetic slant-range SAR amplitude scenes rendered from building records.
//!
//! Each building contributes five regions to the image, mirroring the
//! amplitude profile of a flat-roof building in a slant-range image:
//!
//! * layover: sensor-facing walls swept from the base to the roof,
//! * roof: the footprint polygon projected at z = h,
//! * double-bounce: a one-pixel bright line at the base of facing walls,
//! * footprint: the base polygon at ground reflectivity,
//! * shadow: occluded ground beyond the far-range base edge.
//!
//! Overlap within one building resolves by fixed priority (double-bounce >
//! layover > roof > footprint > shadow); overlapping buildings mix by max
//! reflectivity. Pixels covered by nothing take the ground reflectivity.
//! Amplitude is `sqrt(reflectivity * E)` with `E` unit-mean exponential
//! speckle (single-look intensity statistics), drawn from a per-row seeded
//! stream so the render is reproducible bit for bit and rows are independent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{layover_px, project, shadow_px, SensorModel, WorldPoint};
use crate::raster::{fill_polygon, Bitmap, Dims, Grid32, PixelWindow, Polygon,
    point_segment_distance};
use crate::seedmix;

#[derive(Debug, Error, PartialEq)]
pub enum SimulateError {
    #[error("building {id}: {reason}")]
    InvalidBuilding { id: String, reason: String },
    #[error("building {id} projects outside the scene grid")]
    OutsideGrid { id: String },
    #[error("reflectivity profile must satisfy 0 <= shadow < ground < roof < layover < double_bounce")]
    InvalidProfile,
    #[error("scene grid must be non-empty")]
    EmptyGrid,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// One building: footprint ring in world meters (open, counter-clockwise),
/// roof height above local ground, and the ground elevation of the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub id: String,
    /// Open ring of `(x, y)` ground coordinates in meters, counter-clockwise.
    pub footprint: Vec<[f64; 2]>,
    /// Roof height above the local ground datum, meters.
    pub height: f64,
    /// Ground elevation of the base, meters (carried through to meshes; the
    /// synthetic scenes use a flat datum at zero).
    pub ground: f64,
}

impl BuildingRecord {
    pub fn new(
        id: impl Into<String>,
        footprint: Vec<[f64; 2]>,
        height: f64,
        ground: f64,
    ) -> Result<Self, SimulateError> {
        let b = Self {
            id: id.into(),
            footprint,
            height,
            ground,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let fail = |reason: &str| {
            Err(SimulateError::InvalidBuilding {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.footprint.len() < 3 {
            return fail("footprint needs at least 3 vertices");
        }
        if self
            .footprint
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return fail("footprint has non-finite coordinates");
        }
        if !self.height.is_finite() || self.height < 0.0 {
            return fail("height must be finite and non-negative");
        }
        if !self.ground.is_finite() {
            return fail("ground elevation must be finite");
        }
        let poly = Polygon::new(self.footprint.iter().map(|p| (p[0], p[1])).collect());
        if !poly.is_simple() {
            return fail("footprint ring is self-intersecting or degenerate");
        }
        let area = poly.signed_area();
        if area == 0.0 {
            return fail("footprint has zero area");
        }
        if area < 0.0 {
            return fail("footprint ring must be counter-clockwise");
        }
        Ok(())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            footprint: self
                .footprint
                .iter()
                .map(|p| [p[0] + dx, p[1] + dy])
                .collect(),
            ..self.clone()
        }
    }
}

/// Mean reflectivities of the five scene regions, dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectivityProfile {
    pub ground: f64,
    pub roof: f64,
    pub layover: f64,
    pub double_bounce: f64,
    pub shadow: f64,
}

impl Default for ReflectivityProfile {
    fn default() -> Self {
        Self {
            ground: 0.20,
            roof: 0.45,
            layover: 0.70,
            double_bounce: 1.00,
            shadow: 0.05,
        }
    }
}

impl ReflectivityProfile {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let vals = [
            self.shadow,
            self.ground,
            self.roof,
            self.layover,
            self.double_bounce,
        ];
        if vals.iter().any(|v| !v.is_finite()) || self.shadow < 0.0 {
            return Err(SimulateError::InvalidProfile);
        }
        if !(self.shadow < self.ground
            && self.ground < self.roof
            && self.roof < self.layover
            && self.layover < self.double_bounce)
        {
            return Err(SimulateError::InvalidProfile);
        }
        Ok(())
    }
}

/// Rendered scene: amplitude raster plus the inputs that produced it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub sensor: SensorModel,
    pub amplitude: Grid32,
    pub buildings: Vec<BuildingRecord>,
}

/// Per-building region masks over the full scene grid. Regions may overlap
/// (the layover parallelograms typically cover part of the roof).
#[derive(Debug, Clone)]
pub struct RegionMasks {
    pub layover: Bitmap,
    pub roof: Bitmap,
    pub double_bounce: Bitmap,
    pub shadow: Bitmap,
    pub footprint: Bitmap,
}

/// Image-space signature of one building: projected polygons and the derived
/// per-pixel classifier.
struct Signature {
    base: Polygon,
    roof: Polygon,
    facing_quads: Vec<Polygon>,
    facing_base_segments: Vec<((f64, f64), (f64, f64))>,
    shadow_ext: f64,
    has_height: bool,
    window: PixelWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    DoubleBounce,
    Layover,
    Roof,
    Footprint,
    Shadow,
}

impl Signature {
    fn build(b: &BuildingRecord, sensor: &SensorModel, dims: Dims) -> Result<Self, SimulateError> {
        b.validate()?;
        let proj = |x: f64, y: f64, z: f64| -> Result<(f64, f64), SimulateError> {
            let p = project(WorldPoint::new(x, y, z), sensor)?;
            Ok((p.rg, p.az))
        };
        let mut base_pts = Vec::with_capacity(b.footprint.len());
        let mut roof_pts = Vec::with_capacity(b.footprint.len());
        for v in &b.footprint {
            base_pts.push(proj(v[0], v[1], 0.0)?);
            roof_pts.push(proj(v[0], v[1], b.height)?);
        }
        let base = Polygon::new(base_pts);
        let roof = Polygon::new(roof_pts);

        // Sensor-facing walls: outward normal has a negative x component,
        // i.e. the edge runs toward decreasing y on a counter-clockwise ring.
        let mut facing_quads = Vec::new();
        let mut facing_base_segments = Vec::new();
        if b.height > 0.0 {
            let n = b.footprint.len();
            for i in 0..n {
                let p1 = b.footprint[i];
                let p2 = b.footprint[(i + 1) % n];
                if p2[1] < p1[1] {
                    let b1 = proj(p1[0], p1[1], 0.0)?;
                    let b2 = proj(p2[0], p2[1], 0.0)?;
                    let r2 = proj(p2[0], p2[1], b.height)?;
                    let r1 = proj(p1[0], p1[1], b.height)?;
                    facing_quads.push(Polygon::new(vec![b1, b2, r2, r1]));
                    facing_base_segments.push((b1, b2));
                }
            }
        }

        let lay = layover_px(b.height, sensor)?;
        let shadow_ext = shadow_px(b.height, sensor)?;
        let (x_lo, x_hi, y_lo, y_hi) = base.bounds();

        // The building signature (layover + roof + footprint) must land on
        // the grid; the shadow may clip at the far edge harmlessly.
        if x_lo - lay < 0.0
            || x_hi > dims.cols as f64
            || y_lo < 0.0
            || y_hi > dims.rows as f64
        {
            return Err(SimulateError::OutsideGrid { id: b.id.clone() });
        }

        let window = PixelWindow::covering(
            x_lo - lay - 1.0,
            x_hi + shadow_ext + 1.0,
            y_lo - 1.0,
            y_hi + 1.0,
            dims,
        );
        Ok(Self {
            base,
            roof,
            facing_quads,
            facing_base_segments,
            shadow_ext,
            has_height: b.height > 0.0,
            window,
        })
    }

    /// Highest-priority region covering the pixel center `(x, y)`, if any.
    fn classify(&self, x: f64, y: f64) -> Option<Region> {
        if self.has_height {
            for seg in &self.facing_base_segments {
                if point_segment_distance((x, y), seg.0, seg.1) <= 0.5 {
                    return Some(Region::DoubleBounce);
                }
            }
            for quad in &self.facing_quads {
                if quad.contains(x, y) {
                    return Some(Region::Layover);
                }
            }
        }
        if self.roof.contains(x, y) {
            return Some(Region::Roof);
        }
        if self.base.contains(x, y) {
            return Some(Region::Footprint);
        }
        if self.has_height && self.in_shadow(x, y) {
            return Some(Region::Shadow);
        }
        None
    }

    /// Occluded ground: beyond a far-range base crossing by at most the
    /// shadow extent, and outside the footprint itself.
    fn in_shadow(&self, x: f64, y: f64) -> bool {
        if self.base.contains(x, y) {
            return false;
        }
        let xs = self.base.row_crossings(y);
        xs.chunks_exact(2)
            .any(|pair| x > pair[1] && x <= pair[1] + self.shadow_ext)
    }
}

fn region_value(region: Region, profile: &ReflectivityProfile) -> f64 {
    match region {
        Region::DoubleBounce => profile.double_bounce,
        Region::Layover => profile.layover,
        Region::Roof => profile.roof,
        Region::Footprint => profile.ground,
        Region::Shadow => profile.shadow,
    }
}

/// Render an amplitude scene. `speckle_seed = None` disables speckle
/// (`E = 1` everywhere), which makes amplitudes take exactly the profile
/// values — the noiseless limit used by the geometry tests.
pub fn render(
    buildings: &[BuildingRecord],
    sensor: &SensorModel,
    profile: &ReflectivityProfile,
    speckle_seed: Option<u64>,
    dims: Dims,
) -> Result<Scene, SimulateError> {
    profile.validate()?;
    if dims.is_empty() {
        return Err(SimulateError::EmptyGrid);
    }

    let mut refl = vec![f64::NEG_INFINITY; dims.len()];
    for b in buildings {
        let sig = Signature::build(b, sensor, dims)?;
        let w = sig.window;
        for r in 0..w.dims.rows {
            let row = w.row0 as usize + r;
            let y = row as f64 + 0.5;
            for c in 0..w.dims.cols {
                let col = w.col0 as usize + c;
                let x = col as f64 + 0.5;
                if let Some(region) = sig.classify(x, y) {
                    let v = region_value(region, profile);
                    let cell = &mut refl[row * dims.cols + col];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }

    let mut amplitude = Grid32::filled(dims, 0.0);
    for row in 0..dims.rows {
        let mut rng = speckle_seed.map(|s| seedmix::stream_rng(s, row as u64));
        for col in 0..dims.cols {
            let r = refl[row * dims.cols + col];
            let r = if r.is_finite() { r } else { profile.ground };
            let e = match rng.as_mut() {
                Some(rng) => {
                    let u: f64 = rand::Rng::gen(rng);
                    -(1.0 - u).ln()
                }
                None => 1.0,
            };
            amplitude.set(row, col, (r * e).sqrt() as f32);
        }
    }

    Ok(Scene {
        sensor: *sensor,
        amplitude,
        buildings: buildings.to_vec(),
    })
}

/// Full-grid region masks for a single building.
pub fn region_masks(
    b: &BuildingRecord,
    sensor: &SensorModel,
    dims: Dims,
) -> Result<RegionMasks, SimulateError> {
    if dims.is_empty() {
        return Err(SimulateError::EmptyGrid);
    }
    let sig = Signature::build(b, sensor, dims)?;
    let mut masks = RegionMasks {
        layover: Bitmap::zeros(dims),
        roof: fill_polygon(&sig.roof, PixelWindow::full(dims)),
        double_bounce: Bitmap::zeros(dims),
        shadow: Bitmap::zeros(dims),
        footprint: fill_polygon(&sig.base, PixelWindow::full(dims)),
    };
    if sig.has_height {
        for quad in &sig.facing_quads {
            masks.layover.or_with(&fill_polygon(quad, PixelWindow::full(dims)));
        }
        let w = sig.window;
        for r in 0..w.dims.rows {
            let row = w.row0 as usize + r;
            let y = row as f64 + 0.5;
            for c in 0..w.dims.cols {
                let col = w.col0 as usize + c;
                let x = col as f64 + 0.5;
                for seg in &sig.facing_base_segments {
                    if point_segment_distance((x, y), seg.0, seg.1) <= 0.5 {
                        masks.double_bounce.set(row, col);
                        break;
                    }
                }
                if sig.in_shadow(x, y) {
                    masks.shadow.set(row, col);
                }
            }
        }
    }
    Ok(masks)
}

/// Continuous bounds `(rg_lo, rg_hi, az_lo, az_hi)` of layover + roof +
/// footprint for one building — the extent its bounding box must cover.
/// Pure geometry; the grid plays no part.
pub fn signature_bounds(
    b: &BuildingRecord,
    sensor: &SensorModel,
) -> Result<(f64, f64, f64, f64), SimulateError> {
    b.validate()?;
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for v in &b.footprint {
        let p = project(WorldPoint::new(v[0], v[1], 0.0), sensor)?;
        bounds.0 = bounds.0.min(p.rg);
        bounds.1 = bounds.1.max(p.rg);
        bounds.2 = bounds.2.min(p.az);
        bounds.3 = bounds.3.max(p.az);
    }
    bounds.0 -= layover_px(b.height, sensor)?;
    Ok(bounds)
}
