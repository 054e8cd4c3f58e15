//! Closed-form SAR viewing geometry.
//!
//! The world frame is a local Cartesian frame in meters: `x` points along the
//! ground-range direction (away from the sensor track), `y` along azimuth,
//! `z` up from the local ground datum. The image frame is (rg, az) in
//! continuous pixels, rg growing with ground range at z = 0.
//!
//! The projection is a side-looking parallel projection with the look
//! direction along +x:
//!
//! ```text
//! rg = (x * sin(theta) - z * cos(theta)) / spacing_rg + rg_origin
//! az = y / spacing_az + az_origin
//! ```
//!
//! Two properties carry the whole pipeline: azimuth coordinates do not depend
//! on height, and raising a scatterer by `h` shifts it toward near range by
//! the layover length `L = h * cos(theta)` (slant meters).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("incidence angle must lie strictly between 0 and 90 degrees, got {0}")]
    InvalidTheta(f64),
    #[error("pixel spacing must be positive and finite, got rg={0}, az={1}")]
    InvalidSpacing(f64, f64),
    #[error("origin offsets must be finite")]
    InvalidOrigin,
    #[error("non-finite world coordinate")]
    NonFiniteInput,
    #[error("height must be non-negative, got {0}")]
    NegativeHeight(f64),
    #[error("layover length must be non-negative, got {0}")]
    NegativeLayover(f64),
}

/// Side-looking sensor description: incidence angle and pixel spacings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Incidence angle in degrees, strictly inside (0, 90).
    pub theta_deg: f64,
    /// Slant-range pixel spacing in meters per pixel.
    pub spacing_rg: f64,
    /// Azimuth pixel spacing in meters per pixel.
    pub spacing_az: f64,
    /// Pixel offset of the world origin along rg.
    pub rg_origin: f64,
    /// Pixel offset of the world origin along az.
    pub az_origin: f64,
}

impl SensorModel {
    pub fn new(
        theta_deg: f64,
        spacing_rg: f64,
        spacing_az: f64,
        rg_origin: f64,
        az_origin: f64,
    ) -> Result<Self, GeometryError> {
        if !theta_deg.is_finite() || theta_deg <= 0.0 || theta_deg >= 90.0 {
            return Err(GeometryError::InvalidTheta(theta_deg));
        }
        if !spacing_rg.is_finite() || !spacing_az.is_finite() || spacing_rg <= 0.0 || spacing_az <= 0.0
        {
            return Err(GeometryError::InvalidSpacing(spacing_rg, spacing_az));
        }
        if !rg_origin.is_finite() || !az_origin.is_finite() {
            return Err(GeometryError::InvalidOrigin);
        }
        Ok(Self {
            theta_deg,
            spacing_rg,
            spacing_az,
            rg_origin,
            az_origin,
        })
    }

    pub fn theta_rad(&self) -> f64 {
        self.theta_deg.to_radians()
    }

    pub fn sin_theta(&self) -> f64 {
        self.theta_rad().sin()
    }

    pub fn cos_theta(&self) -> f64 {
        self.theta_rad().cos()
    }
}

/// Point in the local world frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    /// Ground-range meters.
    pub x: f64,
    /// Azimuth meters.
    pub y: f64,
    /// Height meters above the local ground datum.
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Point in the slant-range image frame (continuous pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    /// Slant-range pixels.
    pub rg: f64,
    /// Azimuth pixels.
    pub az: f64,
}

/// Project a world point into the slant-range image.
///
/// Azimuth depends only on `y`; increasing `z` strictly decreases `rg`
/// (layover toward near range).
pub fn project(p: WorldPoint, s: &SensorModel) -> Result<ImagePoint, GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::NonFiniteInput);
    }
    Ok(ImagePoint {
        rg: (p.x * s.sin_theta() - p.z * s.cos_theta()) / s.spacing_rg + s.rg_origin,
        az: p.y / s.spacing_az + s.az_origin,
    })
}

/// Layover length in slant-range pixels for a wall of height `h` meters.
///
/// A vertical wall of height `h` spans `h * cos(theta)` slant meters.
pub fn layover_px(h: f64, s: &SensorModel) -> Result<f64, GeometryError> {
    if !h.is_finite() || h < 0.0 {
        return Err(GeometryError::NegativeHeight(h));
    }
    Ok(h * s.cos_theta() / s.spacing_rg)
}

/// Height in meters from a layover length `l` in slant meters.
///
/// Exact inverse of the layover relation: `height_from_layover(h * cos(theta))`
/// recovers `h`.
pub fn height_from_layover(l: f64, s: &SensorModel) -> Result<f64, GeometryError> {
    if !l.is_finite() || l < 0.0 {
        return Err(GeometryError::NegativeLayover(l));
    }
    Ok(l / s.cos_theta())
}

/// Slant-range extent in pixels of the radar shadow cast by a wall of height
/// `h` meters, measured beyond the far-range base edge.
///
/// The grazing ray over the far roof edge reaches ground `h * tan(theta)`
/// meters beyond the wall base; that ground span maps to
/// `h * sin(theta) * tan(theta)` slant meters.
pub fn shadow_px(h: f64, s: &SensorModel) -> Result<f64, GeometryError> {
    if !h.is_finite() || h < 0.0 {
        return Err(GeometryError::NegativeHeight(h));
    }
    Ok(h * s.sin_theta() * s.theta_rad().tan() / s.spacing_rg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Spotlight-style acquisition parameters used throughout the tests.
    pub(crate) fn hs_sensor() -> SensorModel {
        SensorModel::new(36.08, 0.455, 0.871, 0.0, 0.0).unwrap()
    }

    #[test]
    fn sensor_validation() {
        assert!(SensorModel::new(0.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(SensorModel::new(90.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(SensorModel::new(45.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(SensorModel::new(45.0, 1.0, -1.0, 0.0, 0.0).is_err());
        assert!(SensorModel::new(45.0, 1.0, 1.0, f64::NAN, 0.0).is_err());
        assert!(SensorModel::new(36.08, 0.455, 0.871, 0.0, 0.0).is_ok());
    }

    #[test]
    fn origin_maps_to_origin() {
        let p = project(WorldPoint::new(0.0, 0.0, 0.0), &hs_sensor()).unwrap();
        assert_eq!(p.rg, 0.0);
        assert_eq!(p.az, 0.0);
    }

    #[test]
    fn ground_point_projection() {
        // Frozen from a high-precision trig oracle:
        // 10 * sin(36.08 deg) / 0.455 = 12.9431709843349167
        let p = project(WorldPoint::new(10.0, 8.71, 0.0), &hs_sensor()).unwrap();
        assert_relative_eq!(p.rg, 12.943_170_984_334_917, epsilon = 1e-12);
        assert_relative_eq!(p.az, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn elevated_point_shifts_to_near_range() {
        // (10 * sin - 10 * cos)(36.08 deg) / 0.455 = -4.8193675430458980
        let p = project(WorldPoint::new(10.0, 8.71, 10.0), &hs_sensor()).unwrap();
        assert_relative_eq!(p.rg, -4.819_367_543_045_898, epsilon = 1e-12);
        assert_relative_eq!(p.az, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = hs_sensor();
        assert_eq!(
            project(WorldPoint::new(f64::NAN, 0.0, 0.0), &s),
            Err(GeometryError::NonFiniteInput)
        );
        assert_eq!(
            project(WorldPoint::new(0.0, f64::INFINITY, 0.0), &s),
            Err(GeometryError::NonFiniteInput)
        );
    }

    #[test]
    fn layover_examples() {
        let s = hs_sensor();
        assert_eq!(layover_px(0.0, &s).unwrap(), 0.0);
        // 10 * cos(36.08 deg) / 0.455 = 17.7625385273808147
        assert_relative_eq!(
            layover_px(10.0, &s).unwrap(),
            17.762_538_527_380_815,
            epsilon = 1e-12
        );
        let s60 = SensorModel::new(60.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(layover_px(1.0, &s60).unwrap(), 0.5, epsilon = 1e-12);
        assert!(layover_px(-1.0, &s).is_err());
    }

    #[test]
    fn height_from_layover_examples() {
        // theta -> 0 is disallowed by the sensor invariant; a tiny angle
        // approximates cos(theta) = 1 to the displayed precision.
        let near_zero = SensorModel::new(1e-9, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(height_from_layover(5.0, &near_zero).unwrap(), 5.0, epsilon = 1e-9);

        let s60 = SensorModel::new(60.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(height_from_layover(1.0, &s60).unwrap(), 2.0, epsilon = 1e-12);

        // Frozen oracle value: 8.0820 / cos(36.08 deg) = 10.0000556425290200
        let s = hs_sensor();
        assert_relative_eq!(
            height_from_layover(8.0820, &s).unwrap(),
            10.000_055_642_529_02,
            epsilon = 1e-12
        );
        assert!(height_from_layover(-0.1, &s).is_err());
    }

    #[test]
    fn shadow_extent_oracle() {
        // 10 * sin * tan (36.08 deg) / 0.455 = 9.4314038993632455
        assert_relative_eq!(
            shadow_px(10.0, &hs_sensor()).unwrap(),
            9.431_403_899_363_246,
            epsilon = 1e-12
        );
    }

    #[test]
    fn azimuth_invariant_in_height() {
        let s = hs_sensor();
        for i in 0..100 {
            let x = (i as f64) * 1.37 - 50.0;
            let y = (i as f64) * 0.91 - 40.0;
            let a = project(WorldPoint::new(x, y, 0.0), &s).unwrap();
            let b = project(WorldPoint::new(x, y, 123.456), &s).unwrap();
            assert_eq!(a.az, b.az);
            assert!(b.rg < a.rg, "layover must shift toward near range");
        }
    }

    #[test]
    fn layover_round_trip() {
        let s = hs_sensor();
        for i in 0..200 {
            let h = (i as f64) / 199.0 * 1e4;
            let l_m = layover_px(h, &s).unwrap() * s.spacing_rg;
            let back = height_from_layover(l_m, &s).unwrap();
            if h > 0.0 {
                assert_relative_eq!(back, h, max_relative = 1e-9);
            } else {
                assert_eq!(back, 0.0);
            }
        }
    }

    #[test]
    fn ground_extent_mapping() {
        // A ground segment of length d along x spans d * sin(theta) / spacing_rg
        // pixels, checked against project on the endpoints.
        let s = hs_sensor();
        for i in 1..50 {
            let d = i as f64 * 3.7;
            let a = project(WorldPoint::new(10.0, 5.0, 0.0), &s).unwrap();
            let b = project(WorldPoint::new(10.0 + d, 5.0, 0.0), &s).unwrap();
            assert_relative_eq!(
                b.rg - a.rg,
                d * s.sin_theta() / s.spacing_rg,
                max_relative = 1e-9
            );
        }
    }
}
