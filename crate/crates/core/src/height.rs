//! From predicted boxes to building heights, LoD1 prism meshes, and error
//! metrics.
//!
//! The height comes from the range-axis width difference between the
//! predicted building box and the footprint box: that difference is the
//! layover length in pixels, and `h = L * spacing_rg / cos(theta)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::geometry::{height_from_layover, SensorModel};
use crate::simulate::{BuildingRecord, SimulateError};

#[derive(Debug, Error)]
pub enum HeightError {
    #[error("no results to evaluate")]
    EmptyInput,
    #[error("result for {0} is missing a true height")]
    MissingTrueHeight(String),
    #[error("building {0}: zero-height prism is degenerate, nothing to extrude")]
    ZeroHeightPrism(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Height retrieved for one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightResult {
    pub building_id: String,
    pub predicted_height: f64,
    pub true_height: Option<f64>,
    /// Set when the predicted box was narrower than the footprint box and
    /// the negative layover was clamped to zero.
    pub clamped: bool,
}

/// Convert a predicted building box and its footprint box into a height.
///
/// `L_px = pred.w - fb.w`; negative values clamp to zero height with the
/// `clamped` flag set (heights are physical, the flag keeps the case
/// diagnosable).
pub fn height_from_boxes(
    building_id: impl Into<String>,
    pred: &BBox,
    fb: &BBox,
    sensor: &SensorModel,
) -> HeightResult {
    let l_px = pred.w - fb.w;
    if l_px < 0.0 {
        HeightResult {
            building_id: building_id.into(),
            predicted_height: 0.0,
            true_height: None,
            clamped: true,
        }
    } else {
        // l_px >= 0 and finite, so the conversion cannot fail.
        let h = height_from_layover(l_px * sensor.spacing_rg, sensor).unwrap();
        HeightResult {
            building_id: building_id.into(),
            predicted_height: h,
            true_height: None,
            clamped: false,
        }
    }
}

/// Closed prism: footprint ring at the ground elevation, the same ring at
/// ground + height, one quad per wall, and two polygon caps.
#[derive(Debug, Clone, PartialEq)]
pub struct Lod1Mesh {
    pub building_id: String,
    pub vertices: Vec<[f64; 3]>,
    /// Faces as vertex index lists (0-based).
    pub faces: Vec<Vec<usize>>,
}

/// Extrude a footprint into an LoD1 prism of the given height.
pub fn extrude_lod1(b: &BuildingRecord, height: f64) -> Result<Lod1Mesh, HeightError> {
    b.validate()?;
    if height <= 0.0 {
        return Err(HeightError::ZeroHeightPrism(b.id.clone()));
    }
    let n = b.footprint.len();
    let mut vertices = Vec::with_capacity(2 * n);
    for v in &b.footprint {
        vertices.push([v[0], v[1], b.ground]);
    }
    for v in &b.footprint {
        vertices.push([v[0], v[1], b.ground + height]);
    }
    let mut faces = Vec::with_capacity(n + 2);
    for i in 0..n {
        let j = (i + 1) % n;
        // Outward-facing wall quad for a counter-clockwise base ring.
        faces.push(vec![i, j, n + j, n + i]);
    }
    // Bottom cap faces down: reverse the ring. Top cap keeps the ring order.
    faces.push((0..n).rev().collect());
    faces.push((n..2 * n).collect());
    Ok(Lod1Mesh {
        building_id: b.id.clone(),
        vertices,
        faces,
    })
}

/// Height-error histogram with fixed 1 m bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges_m: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Evaluation metrics over signed height errors `h_true - h_predict`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeightMetrics {
    pub he_mean_m: f64,
    /// Population standard deviation of the signed errors.
    pub he_std_m: f64,
    pub mae_m: f64,
    pub n: usize,
    pub clamped_count: usize,
    pub histogram: Histogram,
}

const HIST_LO: f64 = -30.0;
const HIST_HI: f64 = 30.0;

/// Mean and population standard deviation of the signed height errors, the
/// mean absolute error, and a 1 m histogram over [-30, 30] m clamped at the
/// edges. Every result must carry a true height.
pub fn metrics(results: &[HeightResult]) -> Result<HeightMetrics, HeightError> {
    if results.is_empty() {
        return Err(HeightError::EmptyInput);
    }
    let mut errors = Vec::with_capacity(results.len());
    for r in results {
        let t = r
            .true_height
            .ok_or_else(|| HeightError::MissingTrueHeight(r.building_id.clone()))?;
        errors.push(t - r.predicted_height);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;

    let bins = (HIST_HI - HIST_LO) as usize;
    let mut counts = vec![0u64; bins];
    for &e in &errors {
        let idx = ((e - HIST_LO).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    Ok(HeightMetrics {
        he_mean_m: mean,
        he_std_m: var.sqrt(),
        mae_m: mae,
        n: results.len(),
        clamped_count: results.iter().filter(|r| r.clamped).count(),
        histogram: Histogram {
            bin_edges_m: (0..=bins).map(|i| HIST_LO + i as f64).collect(),
            counts,
        },
    })
}

/// Wavefront-style OBJ text: one `o <id>` object per mesh, `v x y z` vertex
/// lines, `f i j k ...` faces with global 1-based indices.
pub fn obj_string(meshes: &[Lod1Mesh]) -> String {
    let mut out = String::new();
    let mut base = 1usize;
    for m in meshes {
        out.push_str(&format!("o {}\n", m.building_id));
        for v in &m.vertices {
            out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &m.faces {
            out.push('f');
            for idx in f {
                out.push_str(&format!(" {}", base + idx));
            }
            out.push('\n');
        }
        base += m.vertices.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn hs_sensor() -> SensorModel {
        SensorModel::new(36.08, 0.455, 0.871, 0.0, 0.0).unwrap()
    }

    fn bb(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn equal_widths_give_zero_height() {
        let r = height_from_boxes("b", &bb(95.0, 50.0, 20.0, 10.0), &bb(100.0, 50.0, 20.0, 10.0), &hs_sensor());
        assert_eq!(r.predicted_height, 0.0);
        assert!(!r.clamped);
    }

    #[test]
    fn width_difference_inverts_layover() {
        // pred.w - fb.w = 17.763 px at 0.455 m spacing, 36.08 deg -> 10.000 m.
        let r = height_from_boxes(
            "b",
            &bb(91.1185, 50.0, 37.763, 10.0),
            &bb(100.0, 50.0, 20.0, 10.0),
            &hs_sensor(),
        );
        assert_relative_eq!(r.predicted_height, 10.0, epsilon = 1e-3);
    }

    #[test]
    fn negative_layover_clamps_with_flag() {
        let r = height_from_boxes("b", &bb(100.0, 50.0, 19.0, 10.0), &bb(100.0, 50.0, 20.0, 10.0), &hs_sensor());
        assert_eq!(r.predicted_height, 0.0);
        assert!(r.clamped);
    }

    fn unit_square(id: &str) -> BuildingRecord {
        BuildingRecord::new(
            id,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            3.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn square_prism_counts() {
        let mesh = extrude_lod1(&unit_square("sq"), 3.0).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.faces.len(), 6);
        // Top ring sits at ground + height.
        assert!(mesh.vertices[4..].iter().all(|v| v[2] == 3.0));
    }

    #[test]
    fn pentagon_prism_counts() {
        let b = BuildingRecord::new(
            "p",
            vec![[0.0, 0.0], [4.0, 0.0], [5.0, 3.0], [2.0, 5.0], [-1.0, 3.0]],
            5.0,
            1.5,
        )
        .unwrap();
        let mesh = extrude_lod1(&b, 5.0).unwrap();
        assert_eq!(mesh.vertices.len(), 10);
        assert_eq!(mesh.faces.len(), 7);
        assert!(mesh.vertices[..5].iter().all(|v| v[2] == 1.5));
        assert!(mesh.vertices[5..].iter().all(|v| v[2] == 6.5));
    }

    #[test]
    fn zero_height_prism_rejected() {
        assert!(matches!(
            extrude_lod1(&unit_square("z"), 0.0),
            Err(HeightError::ZeroHeightPrism(_))
        ));
    }

    #[test]
    fn mesh_is_closed() {
        // Every undirected edge must be shared by exactly two faces.
        for b in [
            unit_square("a"),
            BuildingRecord::new(
                "b",
                vec![[0.0, 0.0], [4.0, 0.0], [5.0, 3.0], [2.0, 5.0], [-1.0, 3.0]],
                5.0,
                0.0,
            )
            .unwrap(),
        ] {
            let mesh = extrude_lod1(&b, 4.2).unwrap();
            let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for f in &mesh.faces {
                for i in 0..f.len() {
                    let a = f[i];
                    let bq = f[(i + 1) % f.len()];
                    *edge_count.entry((a.min(bq), a.max(bq))).or_default() += 1;
                }
            }
            assert!(edge_count.values().all(|&c| c == 2), "{edge_count:?}");
        }
    }

    fn result(id: &str, pred: f64, truth: f64) -> HeightResult {
        HeightResult {
            building_id: id.into(),
            predicted_height: pred,
            true_height: Some(truth),
            clamped: false,
        }
    }

    #[test]
    fn metrics_exact_predictions() {
        let rs = vec![result("a", 5.0, 5.0), result("b", 12.0, 12.0)];
        let m = metrics(&rs).unwrap();
        assert_eq!(m.he_mean_m, 0.0);
        assert_eq!(m.he_std_m, 0.0);
        assert_eq!(m.mae_m, 0.0);
        assert_eq!(m.n, 2);
    }

    #[test]
    fn metrics_hand_computed() {
        // Errors {1, -1, 2}: mean 2/3, population std sqrt(14/9) = 1.2472.
        let rs = vec![
            result("a", 4.0, 5.0),
            result("b", 6.0, 5.0),
            result("c", 3.0, 5.0),
        ];
        let m = metrics(&rs).unwrap();
        assert_relative_eq!(m.he_mean_m, 0.666_666_666_666_666_7, epsilon = 1e-12);
        assert_relative_eq!(m.he_std_m, 1.247_219_128_924_647_1, epsilon = 1e-12);
        assert_relative_eq!(m.mae_m, 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_single_element() {
        let m = metrics(&[result("a", 0.0, 5.0)]).unwrap();
        assert_eq!(m.he_mean_m, 5.0);
        assert_eq!(m.he_std_m, 0.0);
    }

    #[test]
    fn metrics_negation_symmetry() {
        let rs: Vec<HeightResult> = (0..7)
            .map(|i| result(&format!("b{i}"), i as f64, 2.0 * i as f64 - 3.0))
            .collect();
        let neg: Vec<HeightResult> = rs
            .iter()
            .map(|r| HeightResult {
                building_id: r.building_id.clone(),
                predicted_height: r.true_height.unwrap(),
                true_height: Some(r.predicted_height),
                clamped: false,
            })
            .collect();
        let m1 = metrics(&rs).unwrap();
        let m2 = metrics(&neg).unwrap();
        assert_relative_eq!(m1.he_mean_m, -m2.he_mean_m, epsilon = 1e-12);
        assert_relative_eq!(m1.he_std_m, m2.he_std_m, epsilon = 1e-12);
    }

    #[test]
    fn metrics_histogram_clamps_at_edges() {
        let rs = vec![
            result("far-low", 100.0, 0.0),  // error -100 -> first bin
            result("far-high", 0.0, 100.0), // error +100 -> last bin
            result("mid", 5.0, 5.5),        // error 0.5 -> bin [0, 1)
        ];
        let m = metrics(&rs).unwrap();
        assert_eq!(m.histogram.counts.len(), 60);
        assert_eq!(m.histogram.bin_edges_m.len(), 61);
        assert_eq!(m.histogram.counts[0], 1);
        assert_eq!(m.histogram.counts[59], 1);
        assert_eq!(m.histogram.counts[30], 1);
    }

    #[test]
    fn metrics_requires_truth() {
        assert!(metrics(&[]).is_err());
        let r = HeightResult {
            building_id: "x".into(),
            predicted_height: 1.0,
            true_height: None,
            clamped: false,
        };
        assert!(matches!(
            metrics(&[r]),
            Err(HeightError::MissingTrueHeight(_))
        ));
    }

    #[test]
    fn obj_output_shape() {
        let mesh = extrude_lod1(&unit_square("house_1"), 3.0).unwrap();
        let text = obj_string(&[mesh.clone(), {
            let mut m2 = mesh;
            m2.building_id = "house_2".into();
            m2
        }]);
        assert!(text.starts_with("o house_1\n"));
        assert!(text.contains("\no house_2\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 16);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 12);
        // Second object's faces index past the first object's vertices.
        let last_face = text.lines().rev().find(|l| l.starts_with("f ")).unwrap();
        assert!(last_face.split_whitespace().skip(1).all(|t| t.parse::<usize>().unwrap() > 8));
    }
}
