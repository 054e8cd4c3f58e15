//! On-disk file formats.
//!
//! * `.gray32` — raster container: magic `SARP`, u32 LE version = 1, u32 LE
//!   rows, u32 LE cols, then rows x cols float32 LE row-major. Masks use the
//!   same container with values in {0.0, 1.0}.
//! * `footprints.json` — `{"crs": "local-meters", "buildings": [{"id", "footprint",
//!   "height_m", "ground_m"}]}`, open counter-clockwise rings.
//! * `manifest.json` — sensor block, patch/stride, normalization constants,
//!   and the sample table with patch-local boxes.
//! * `pred.csv` — `building_id,cx,cy,w,h` in scene-coordinate pixels, `.`
//!   decimal separator, LF line endings.
//! * `report.json` — height metrics (serialized from [`crate::height::HeightMetrics`]).
//!
//! JSON writers emit pretty output with struct-declaration key order and a
//! trailing newline, so identical values produce byte-identical files.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::dataset::{NormConstants, Split};
use crate::geometry::SensorModel;
use crate::raster::{Dims, Grid32};
use crate::simulate::{BuildingRecord, ReflectivityProfile, SimulateError};

pub const GRAY32_MAGIC: &[u8; 4] = b"SARP";
pub const GRAY32_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: not a gray32 raster (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported gray32 version {version}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("{path}: raster payload truncated or oversized")]
    BadPayload { path: PathBuf },
    #[error("{path}: footprints crs must be \"local-meters\", got {crs:?}")]
    BadCrs { path: PathBuf, crs: String },
    #[error("{path}: building {id}: ring must be open (first vertex not repeated)")]
    ClosedRing { path: PathBuf, id: String },
    #[error("{path} line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Building(#[from] SimulateError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// gray32 rasters
// ---------------------------------------------------------------------------

pub fn write_gray32(path: &Path, grid: &Grid32) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut buf = Vec::with_capacity(16 + grid.data.len() * 4);
    buf.extend_from_slice(GRAY32_MAGIC);
    buf.extend_from_slice(&GRAY32_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.dims.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.dims.cols as u32).to_le_bytes());
    for v in &grid.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_gray32(path: &Path) -> Result<Grid32, FormatError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| FormatError::BadPayload {
            path: path.to_path_buf(),
        })?;
    if &header[0..4] != GRAY32_MAGIC {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != GRAY32_VERSION {
        return Err(FormatError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let expect = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::BadPayload {
            path: path.to_path_buf(),
        })?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(io_err(path))?;
    if payload.len() != expect {
        return Err(FormatError::BadPayload {
            path: path.to_path_buf(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Grid32::from_vec(Dims::new(rows, cols), data))
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| FormatError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// footprints.json
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FootprintsFile {
    pub crs: String,
    pub buildings: Vec<FootprintEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FootprintEntry {
    pub id: String,
    pub footprint: Vec<[f64; 2]>,
    pub height_m: f64,
    pub ground_m: f64,
}

pub fn write_footprints(path: &Path, buildings: &[BuildingRecord]) -> Result<(), FormatError> {
    let file = FootprintsFile {
        crs: "local-meters".to_string(),
        buildings: buildings
            .iter()
            .map(|b| FootprintEntry {
                id: b.id.clone(),
                footprint: b.footprint.clone(),
                height_m: b.height,
                ground_m: b.ground,
            })
            .collect(),
    };
    write_json(path, &file)
}

/// Read and validate a footprints file into building records. Rings must be
/// open (first vertex not repeated), counter-clockwise, and simple.
pub fn read_footprints(path: &Path) -> Result<Vec<BuildingRecord>, FormatError> {
    let file: FootprintsFile = read_json(path)?;
    if file.crs != "local-meters" {
        return Err(FormatError::BadCrs {
            path: path.to_path_buf(),
            crs: file.crs,
        });
    }
    let mut out = Vec::with_capacity(file.buildings.len());
    for e in file.buildings {
        if e.footprint.len() >= 2 && e.footprint.first() == e.footprint.last() {
            return Err(FormatError::ClosedRing {
                path: path.to_path_buf(),
                id: e.id,
            });
        }
        out.push(BuildingRecord::new(e.id, e.footprint, e.height_m, e.ground_m)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scene sidecar metadata
// ---------------------------------------------------------------------------

/// Everything needed to reproduce a rendered scene from its footprints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub sensor: SensorModel,
    pub dims: Dims,
    /// Speckle seed; absent means speckle was disabled.
    pub speckle_seed: Option<u64>,
    pub profile: ReflectivityProfile,
}

/// Sidecar path next to a raster: `scene.gray32` -> `scene.meta.json`.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("meta.json")
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sensor: SensorModel,
    pub patch_size: usize,
    pub stride: usize,
    pub normalization: NormConstants,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub split: Split,
    /// Patch raster path, relative to the manifest directory.
    pub patch: String,
    /// Mask raster path, relative to the manifest directory.
    pub mask: String,
    /// `[cx, cy, w, h]` in patch-local continuous pixels.
    pub footprint_box: [f64; 4],
    pub gt_box: [f64; 4],
    pub height_m: f64,
    /// Scene pixel of the patch top-left corner, `[row, col]`.
    pub patch_origin: [usize; 2],
}

impl ManifestSample {
    pub fn footprint_bbox(&self) -> BBox {
        BBox::from_array(self.footprint_box).expect("manifest box invariant")
    }

    pub fn gt_bbox(&self) -> BBox {
        BBox::from_array(self.gt_box).expect("manifest box invariant")
    }
}

// ---------------------------------------------------------------------------
// Predictions CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub building_id: String,
    pub bbox: BBox,
}

pub const PRED_HEADER: &str = "building_id,cx,cy,w,h";

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut out = String::from(PRED_HEADER);
    out.push('\n');
    for p in preds {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.building_id, p.bbox.cx, p.bbox.cy, p.bbox.w, p.bbox.h
        ));
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let csv_err = |line: usize, message: String| FormatError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PRED_HEADER => {}
        other => {
            return Err(csv_err(
                1,
                format!("expected header {PRED_HEADER:?}, got {:?}", other.map(|(_, l)| l)),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(csv_err(i + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let mut nums = [0.0f64; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            nums[k] = f
                .trim()
                .parse::<f64>()
                .map_err(|e| csv_err(i + 1, format!("field {}: {e}", k + 2)))?;
        }
        let bbox = BBox::from_array(nums)
            .map_err(|e| csv_err(i + 1, format!("invalid box: {e}")))?;
        out.push(Prediction {
            building_id: fields[0].trim().to_string(),
            bbox,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training loss log
// ---------------------------------------------------------------------------

pub const LOSS_LOG_HEADER: &str = "epoch,mean_loss,lr";

pub fn write_loss_log(path: &Path, rows: &[(usize, f64, f64)]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for (epoch, loss, lr) in rows {
        out.push_str(&format!("{epoch},{loss},{lr}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<(usize, f64, f64)>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |message: String| FormatError::Csv {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        }
        out.push((
            fields[0].trim().parse().map_err(|e| parse_err(format!("epoch: {e}")))?,
            fields[1].trim().parse().map_err(|e| parse_err(format!("loss: {e}")))?,
            fields[2].trim().parse().map_err(|e| parse_err(format!("lr: {e}")))?,
        ));
    }
    Ok(out)
}
