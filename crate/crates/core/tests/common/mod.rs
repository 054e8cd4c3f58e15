//! Shared fixtures for the integration and acceptance suites.

use std::path::Path;

use sarbbr::cli;
use sarbbr::formats::write_footprints;
use sarbbr::geometry::SensorModel;
use sarbbr::raster::Dims;
use sarbbr::simulate::BuildingRecord;
use sarbbr::synthetic::{fit_sensor_and_dims, random_city, CityParams};

/// A synthetic city plus the sensor/grid that frames it.
pub struct CityFixture {
    pub buildings: Vec<BuildingRecord>,
    pub sensor: SensorModel,
    pub dims: Dims,
}

/// Default acceptance-scale geometry: 1.0 m slant-range spacing, 1.8 m
/// azimuth spacing (stripmap-like anisotropy), 36.08 degree incidence.
pub fn city_fixture(seed: u64, count: usize) -> CityFixture {
    let buildings = random_city(&CityParams {
        count,
        height_range: (3.0, 40.0),
        side_range: (14.0, 30.0),
        pitch: (90.0, 126.0),
        per_row: 23,
        seed,
    });
    let (sensor, dims) = fit_sensor_and_dims(&buildings, 36.08, 1.0, 1.8, 16.0).unwrap();
    CityFixture {
        buildings,
        sensor,
        dims,
    }
}

/// Small fixture for fast CLI round trips.
pub fn small_city_fixture(seed: u64) -> CityFixture {
    let buildings = random_city(&CityParams {
        count: 30,
        height_range: (5.0, 25.0),
        side_range: (14.0, 26.0),
        pitch: (80.0, 110.0),
        per_row: 6,
        seed,
    });
    let (sensor, dims) = fit_sensor_and_dims(&buildings, 36.08, 1.0, 1.8, 12.0).unwrap();
    CityFixture {
        buildings,
        sensor,
        dims,
    }
}

pub fn write_city(dir: &Path, fixture: &CityFixture) -> std::path::PathBuf {
    let path = dir.join("footprints.json");
    write_footprints(&path, &fixture.buildings).unwrap();
    path
}

/// Run the CLI in-process.
#[allow(dead_code)]
pub fn run_cli(args: &[&str]) -> Result<(), cli::CliError> {
    let mut argv = vec!["sarbbr"];
    argv.extend_from_slice(args);
    cli::run(argv)
}

/// Simulate flags for a fixture's sensor.
pub fn sensor_flags(s: &SensorModel) -> Vec<String> {
    vec![
        "--theta".into(),
        s.theta_deg.to_string(),
        "--spacing-rg".into(),
        s.spacing_rg.to_string(),
        "--spacing-az".into(),
        s.spacing_az.to_string(),
        "--rg-origin".into(),
        s.rg_origin.to_string(),
        "--az-origin".into(),
        s.az_origin.to_string(),
    ]
}

#[allow(dead_code)]
pub fn run_cli_owned(args: &[String]) -> Result<(), cli::CliError> {
    let mut argv = vec!["sarbbr".to_string()];
    argv.extend_from_slice(args);
    cli::run(argv)
}
