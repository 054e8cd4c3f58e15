//! RoI-align: fixed-size feature extraction from a box via bilinear sampling.

use super::{NnError, Tensor3};
use crate::bbox::BBox;

/// Output grid size and sampling density of RoI-align.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiAlignCfg {
    /// Output is `out_size x out_size` bins.
    pub out_size: usize,
    /// Each bin averages `samples_per_bin x samples_per_bin` bilinear samples
    /// at regular sub-positions.
    pub samples_per_bin: usize,
}

impl Default for RoiAlignCfg {
    fn default() -> Self {
        Self {
            out_size: 7,
            samples_per_bin: 2,
        }
    }
}

/// The RoI rectangle in feature coordinates after scaling and clamping.
struct MappedRoi {
    x0: f64,
    y0: f64,
    bin_w: f64,
    bin_h: f64,
}

fn map_roi(
    features: &Tensor3,
    roi: &BBox,
    spatial_scale: f64,
    cfg: RoiAlignCfg,
) -> Result<MappedRoi, NnError> {
    if cfg.out_size == 0 || cfg.samples_per_bin == 0 {
        return Err(NnError::ShapeMismatch("roi-align output config".into()));
    }
    if features.is_empty() {
        return Err(NnError::ShapeMismatch("empty feature map".into()));
    }
    // Map to feature coordinates and clamp to the feature extent; an RoI
    // entirely outside the extent has nothing to pool.
    let x0 = (roi.x_lo() * spatial_scale).max(0.0);
    let x1 = (roi.x_hi() * spatial_scale).min(features.w as f64);
    let y0 = (roi.y_lo() * spatial_scale).max(0.0);
    let y1 = (roi.y_hi() * spatial_scale).min(features.h as f64);
    if x1 <= x0 || y1 <= y0 {
        return Err(NnError::RoiOutside);
    }
    Ok(MappedRoi {
        x0,
        y0,
        bin_w: (x1 - x0) / cfg.out_size as f64,
        bin_h: (y1 - y0) / cfg.out_size as f64,
    })
}

/// Bilinear sample at continuous coordinates `(x, y)`: the point is moved to
/// index space (pixel centers at half-integers), clamped to the map, and
/// interpolated between its four integer-index neighbors. Returns the
/// neighbor indices and weights so forward and backward share the stencil.
#[inline]
fn bilinear_stencil(h: usize, w: usize, y: f64, x: f64) -> ([usize; 4], [f64; 4]) {
    let iy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let ix = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let y_low = iy.floor() as usize;
    let x_low = ix.floor() as usize;
    let y_high = (y_low + 1).min(h - 1);
    let x_high = (x_low + 1).min(w - 1);
    let fy = iy - y_low as f64;
    let fx = ix - x_low as f64;
    (
        [
            y_low * w + x_low,
            y_low * w + x_high,
            y_high * w + x_low,
            y_high * w + x_high,
        ],
        [
            (1.0 - fy) * (1.0 - fx),
            (1.0 - fy) * fx,
            fy * (1.0 - fx),
            fy * fx,
        ],
    )
}

/// Pool `features` over `roi` (given in input-pixel coordinates; the
/// cumulative backbone stride enters through `spatial_scale = 1 / stride`).
pub fn roi_align_forward(
    features: &Tensor3,
    roi: &BBox,
    spatial_scale: f64,
    cfg: RoiAlignCfg,
) -> Result<Tensor3, NnError> {
    let m = map_roi(features, roi, spatial_scale, cfg)?;
    let n = cfg.samples_per_bin;
    let inv = 1.0 / (n * n) as f64;
    let mut out = Tensor3::zeros(features.c, cfg.out_size, cfg.out_size);
    for by in 0..cfg.out_size {
        for bx in 0..cfg.out_size {
            for sy in 0..n {
                for sx in 0..n {
                    let y = m.y0 + (by as f64 + (sy as f64 + 0.5) / n as f64) * m.bin_h;
                    let x = m.x0 + (bx as f64 + (sx as f64 + 0.5) / n as f64) * m.bin_w;
                    let (idx, wgt) = bilinear_stencil(features.h, features.w, y, x);
                    for c in 0..features.c {
                        let plane = c * features.h * features.w;
                        let v = wgt[0] * features.data[plane + idx[0]]
                            + wgt[1] * features.data[plane + idx[1]]
                            + wgt[2] * features.data[plane + idx[2]]
                            + wgt[3] * features.data[plane + idx[3]];
                        out.data[(c * cfg.out_size + by) * cfg.out_size + bx] += v * inv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Distribute pooled gradients back through the bilinear weights.
pub fn roi_align_backward(
    feature_shape: (usize, usize, usize),
    roi: &BBox,
    spatial_scale: f64,
    cfg: RoiAlignCfg,
    grad_out: &Tensor3,
) -> Result<Tensor3, NnError> {
    let (c_n, h, w) = feature_shape;
    if grad_out.c != c_n || grad_out.h != cfg.out_size || grad_out.w != cfg.out_size {
        return Err(NnError::ShapeMismatch("roi-align grad shape".into()));
    }
    let probe = Tensor3::zeros(c_n, h, w);
    let m = map_roi(&probe, roi, spatial_scale, cfg)?;
    let n = cfg.samples_per_bin;
    let inv = 1.0 / (n * n) as f64;
    let mut dfeat = Tensor3::zeros(c_n, h, w);
    for by in 0..cfg.out_size {
        for bx in 0..cfg.out_size {
            for sy in 0..n {
                for sx in 0..n {
                    let y = m.y0 + (by as f64 + (sy as f64 + 0.5) / n as f64) * m.bin_h;
                    let x = m.x0 + (bx as f64 + (sx as f64 + 0.5) / n as f64) * m.bin_w;
                    let (idx, wgt) = bilinear_stencil(h, w, y, x);
                    for c in 0..c_n {
                        let g = grad_out.data[(c * cfg.out_size + by) * cfg.out_size + bx] * inv;
                        let plane = c * h * w;
                        dfeat.data[plane + idx[0]] += g * wgt[0];
                        dfeat.data[plane + idx[1]] += g * wgt[1];
                        dfeat.data[plane + idx[2]] += g * wgt[2];
                        dfeat.data[plane + idx[3]] += g * wgt[3];
                    }
                }
            }
        }
    }
    Ok(dfeat)
}
