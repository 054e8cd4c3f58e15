//! Axis-aligned bounding boxes in pixel coordinates, delta encoding between a
//! candidate and a target box, IoU, and the CIoU loss with analytic gradients.
//!
//! Boxes use the center parameterization `(cx, cy, w, h)`. The CIoU loss is
//!
//! ```text
//! loss = 1 - IoU + rho^2(b, g) / c^2 + alpha * v
//! ```
//!
//! where `rho` is the center distance, `c` the diagonal of the smallest
//! enclosing box, `v = (4/pi^2) * (atan(wg/hg) - atan(w/h))^2` and
//! `alpha = v / ((1 - IoU) + v)`. `alpha` is held constant under
//! differentiation, which avoids the vanishing denominator as IoU -> 1.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BboxError {
    #[error("box extents must be positive and finite: w={w}, h={h}")]
    InvalidExtent { w: f64, h: f64 },
    #[error("box center must be finite: cx={cx}, cy={cy}")]
    NonFiniteCenter { cx: f64, cy: f64 },
    #[error("decoded box overflowed to a non-finite value")]
    Overflow,
}

/// Axis-aligned box: center `(cx, cy)` plus extents `(w, h)`, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, BboxError> {
        if !cx.is_finite() || !cy.is_finite() {
            return Err(BboxError::NonFiniteCenter { cx, cy });
        }
        if !w.is_finite() || !h.is_finite() || w <= 0.0 || h <= 0.0 {
            return Err(BboxError::InvalidExtent { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Tight box over a non-empty set of points `(x, y)`.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self, BboxError> {
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        Self::new(
            0.5 * (x_lo + x_hi),
            0.5 * (y_lo + y_hi),
            x_hi - x_lo,
            y_hi - y_lo,
        )
    }

    pub fn x_lo(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn x_hi(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn y_lo(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn y_hi(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self, BboxError> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Dimensionless regression target between a candidate box and a target box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Delta {
    pub const ZERO: Delta = Delta {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Delta {
            dx: a[0],
            dy: a[1],
            dw: a[2],
            dh: a[3],
        }
    }
}

/// Regression target that maps candidate `b` onto target `g`.
pub fn encode(b: &BBox, g: &BBox) -> Delta {
    Delta {
        dx: (g.cx - b.cx) / b.w,
        dy: (g.cy - b.cy) / b.h,
        dw: (g.w / b.w).ln(),
        dh: (g.h / b.h).ln(),
    }
}

/// Apply a regression delta to candidate `b`; exact inverse of [`encode`].
pub fn decode(b: &BBox, d: &Delta) -> Result<BBox, BboxError> {
    let w = b.w * d.dw.exp();
    let h = b.h * d.dh.exp();
    let cx = b.cx + d.dx * b.w;
    let cy = b.cy + d.dy * b.h;
    if !(w.is_finite() && h.is_finite() && cx.is_finite() && cy.is_finite()) {
        return Err(BboxError::Overflow);
    }
    BBox::new(cx, cy, w, h)
}

/// Intersection-over-union of two boxes, in `[0, 1]`.
pub fn iou(b: &BBox, g: &BBox) -> f64 {
    let ix = (b.x_hi().min(g.x_hi()) - b.x_lo().max(g.x_lo())).max(0.0);
    let iy = (b.y_hi().min(g.y_hi()) - b.y_lo().max(g.y_lo())).max(0.0);
    let inter = ix * iy;
    let union = b.w * b.h + g.w * g.h - inter;
    inter / union
}

/// CIoU loss value, its three components, and the analytic gradient with
/// respect to the predicted box `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CIoUValue {
    pub loss: f64,
    pub iou: f64,
    /// Normalized center distance `rho^2 / c^2`.
    pub center_term: f64,
    /// Aspect-ratio penalty `alpha * v`.
    pub aspect_term: f64,
    /// Trade-off weight of the aspect term at the evaluation point. Frozen
    /// during differentiation; finite-difference oracles must difference
    /// [`ciou_loss_alpha_frozen`] with this value to check `gradient`.
    pub alpha: f64,
    /// d loss / d (cx, cy, w, h) of the predicted box.
    pub gradient: [f64; 4],
}

/// CIoU objective with the aspect trade-off `alpha` pinned to a constant:
/// `1 - IoU + rho^2/c^2 + alpha * v`. This is the function that
/// [`ciou_loss`]'s gradient differentiates.
pub fn ciou_loss_alpha_frozen(pred: &BBox, g: &BBox, alpha: f64) -> f64 {
    let iou_v = iou(pred, g);
    let cw = pred.x_hi().max(g.x_hi()) - pred.x_lo().min(g.x_lo());
    let ch = pred.y_hi().max(g.y_hi()) - pred.y_lo().min(g.y_lo());
    let c2 = cw * cw + ch * ch;
    let rho2 = (pred.cx - g.cx).powi(2) + (pred.cy - g.cy).powi(2);
    let center = if c2 > 0.0 { rho2 / c2 } else { 0.0 };
    let datan = (g.w / g.h).atan() - (pred.w / pred.h).atan();
    let v = 4.0 / (PI * PI) * datan * datan;
    1.0 - iou_v + center + alpha * v
}

/// Derivative of a min/max of `(pred_side, target_side)` with respect to the
/// predicted side: 1 when the predicted side is active, 0 when the target
/// side is, and the subgradient midpoint 0.5 at an exact tie (which is what
/// a central difference measures at the kink).
#[inline]
fn pick(pred_side: f64, target_side: f64, want_greater: bool) -> f64 {
    if pred_side == target_side {
        0.5
    } else if (pred_side > target_side) == want_greater {
        1.0
    } else {
        0.0
    }
}

/// CIoU loss of predicted box `pred` against target `g`.
///
/// At zero overlap the IoU area term is flat, so its gradient vanishes there;
/// the center and aspect terms still drive the prediction toward the target.
pub fn ciou_loss(pred: &BBox, g: &BBox) -> CIoUValue {
    if pred == g {
        // Exact match: loss 0; 0 is a valid subgradient at the IoU kink.
        return CIoUValue {
            loss: 0.0,
            iou: 1.0,
            center_term: 0.0,
            aspect_term: 0.0,
            alpha: 0.0,
            gradient: [0.0; 4],
        };
    }

    let (bl, br) = (pred.x_lo(), pred.x_hi());
    let (bt, bb) = (pred.y_lo(), pred.y_hi());
    let (gl, gr) = (g.x_lo(), g.x_hi());
    let (gt, gb) = (g.y_lo(), g.y_hi());

    // Overlap area and its gradient. Indicators pick the branch of min/max
    // that is active; ties resolve toward the predicted box.
    let ix = (br.min(gr) - bl.max(gl)).max(0.0);
    let iy = (bb.min(gb) - bt.max(gt)).max(0.0);
    let inter = ix * iy;
    let union = pred.w * pred.h + g.w * g.h - inter;
    let iou = inter / union;

    let (dix_dx, dix_dw, diy_dy, diy_dh) = if inter > 0.0 {
        let hi_x = pick(br, gr, false);
        let lo_x = pick(bl, gl, true);
        let hi_y = pick(bb, gb, false);
        let lo_y = pick(bt, gt, true);
        (hi_x - lo_x, 0.5 * (hi_x + lo_x), hi_y - lo_y, 0.5 * (hi_y + lo_y))
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let di = [dix_dx * iy, diy_dy * ix, dix_dw * iy, diy_dh * ix];
    let du = [-di[0], -di[1], pred.h - di[2], pred.w - di[3]];
    let mut diou = [0.0; 4];
    for k in 0..4 {
        diou[k] = (di[k] * union - inter * du[k]) / (union * union);
    }

    // Normalized center distance.
    let rho2 = (pred.cx - g.cx).powi(2) + (pred.cy - g.cy).powi(2);
    let cw = br.max(gr) - bl.min(gl);
    let ch = bb.max(gb) - bt.min(gt);
    let c2 = cw * cw + ch * ch;

    let (center_term, dcenter) = if c2 > 0.0 {
        let drho2 = [2.0 * (pred.cx - g.cx), 2.0 * (pred.cy - g.cy), 0.0, 0.0];
        let hi_x = pick(br, gr, true);
        let lo_x = pick(bl, gl, false);
        let hi_y = pick(bb, gb, true);
        let lo_y = pick(bt, gt, false);
        let dcw = [hi_x - lo_x, 0.0, 0.5 * (hi_x + lo_x), 0.0];
        let dch = [0.0, hi_y - lo_y, 0.0, 0.5 * (hi_y + lo_y)];
        let mut dc2 = [0.0; 4];
        let mut out = [0.0; 4];
        for k in 0..4 {
            dc2[k] = 2.0 * cw * dcw[k] + 2.0 * ch * dch[k];
            out[k] = (drho2[k] * c2 - rho2 * dc2[k]) / (c2 * c2);
        }
        (rho2 / c2, out)
    } else {
        (0.0, [0.0; 4])
    };

    // Aspect-ratio consistency; alpha is a constant under differentiation.
    let k_aspect = 4.0 / (PI * PI);
    let datan = (g.w / g.h).atan() - (pred.w / pred.h).atan();
    let v = k_aspect * datan * datan;
    let denom = (1.0 - iou) + v;
    let alpha = if denom > 0.0 { v / denom } else { 0.0 };
    let wh2 = pred.w * pred.w + pred.h * pred.h;
    let dv = [
        0.0,
        0.0,
        -2.0 * k_aspect * datan * pred.h / wh2,
        2.0 * k_aspect * datan * pred.w / wh2,
    ];

    let mut gradient = [0.0; 4];
    for k in 0..4 {
        gradient[k] = -diou[k] + dcenter[k] + alpha * dv[k];
    }

    CIoUValue {
        loss: 1.0 - iou + center_term + alpha * v,
        iou,
        center_term,
        aspect_term: alpha * v,
        alpha,
        gradient,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bb(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn box_validation() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert!(BBox::new(5.0, 5.0, 3.0, 2.0).is_ok());
    }

    #[test]
    fn encode_identity() {
        let b = bb(10.0, 10.0, 4.0, 2.0);
        assert_eq!(encode(&b, &b), Delta::ZERO);
    }

    #[test]
    fn encode_worked_example() {
        // dx = 2/4, dy = 1/2, dw = ln 2, dh = 0.
        let d = encode(&bb(10.0, 10.0, 4.0, 2.0), &bb(12.0, 11.0, 8.0, 2.0));
        assert_relative_eq!(d.dx, 0.5, epsilon = 1e-15);
        assert_relative_eq!(d.dy, 0.5, epsilon = 1e-15);
        assert_relative_eq!(d.dw, 0.693_147_180_559_945_3, epsilon = 1e-15);
        assert_eq!(d.dh, 0.0);
    }

    #[test]
    fn encode_log_base() {
        let d = encode(&bb(0.0, 0.0, 1.0, 1.0), &bb(0.0, 0.0, std::f64::consts::E, 1.0));
        assert_relative_eq!(d.dw, 1.0, epsilon = 1e-15);
        assert_eq!((d.dx, d.dy, d.dh), (0.0, 0.0, 0.0));
    }

    #[test]
    fn decode_inverts_encode_worked_examples() {
        let cases = [
            (bb(10.0, 10.0, 4.0, 2.0), bb(10.0, 10.0, 4.0, 2.0)),
            (bb(10.0, 10.0, 4.0, 2.0), bb(12.0, 11.0, 8.0, 2.0)),
            (bb(0.0, 0.0, 1.0, 1.0), bb(0.0, 0.0, std::f64::consts::E, 1.0)),
        ];
        for (b, g) in cases {
            let back = decode(&b, &encode(&b, &g)).unwrap();
            assert_relative_eq!(back.cx, g.cx, epsilon = 1e-9);
            assert_relative_eq!(back.cy, g.cy, epsilon = 1e-9);
            assert_relative_eq!(back.w, g.w, max_relative = 1e-9);
            assert_relative_eq!(back.h, g.h, max_relative = 1e-9);
        }
    }

    #[test]
    fn decode_overflow_rejected() {
        let b = bb(0.0, 0.0, 1e200, 1.0);
        let d = Delta {
            dx: 0.0,
            dy: 0.0,
            dw: 400.0,
            dh: 0.0,
        };
        assert_eq!(decode(&b, &d), Err(BboxError::Overflow));
    }

    #[test]
    fn iou_examples() {
        let b = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&b, &bb(10.0, 0.0, 2.0, 2.0)), 0.0);
        // Intersection 2, union 6.
        assert_relative_eq!(iou(&b, &bb(1.0, 0.0, 2.0, 2.0)), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ciou_identity() {
        let b = bb(5.0, 5.0, 3.0, 2.0);
        let v = ciou_loss(&b, &b);
        assert_eq!(v.loss, 0.0);
        assert_eq!(v.iou, 1.0);
        assert_eq!(v.gradient, [0.0; 4]);
    }

    #[test]
    fn ciou_disjoint_worked_example() {
        // IoU = 0, rho^2 = 100, c^2 = 12^2 + 2^2 = 148, v = 0:
        // loss = 1 + 100/148 = 1.6756756756756757.
        let v = ciou_loss(&bb(0.0, 0.0, 2.0, 2.0), &bb(10.0, 0.0, 2.0, 2.0));
        assert_eq!(v.iou, 0.0);
        assert_relative_eq!(v.loss, 1.675_675_675_675_675_7, epsilon = 1e-12);
        assert_eq!(v.aspect_term, 0.0);
        // The IoU area term is flat at zero overlap: only the center term
        // moves, and only through cx here (same heights, same y).
        assert!(v.gradient[0] < 0.0, "pulling pred toward +x lowers the loss");
    }

    fn fd_gradient(pred: &BBox, g: &BBox, step: f64) -> [f64; 4] {
        // Central differences of the frozen-alpha objective, which is what
        // the analytic gradient differentiates.
        let alpha = ciou_loss(pred, g).alpha;
        let mut out = [0.0; 4];
        let p = pred.as_array();
        for k in 0..4 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += step;
            lo[k] -= step;
            let fh = ciou_loss_alpha_frozen(&BBox::from_array(hi).unwrap(), g, alpha);
            let fl = ciou_loss_alpha_frozen(&BBox::from_array(lo).unwrap(), g, alpha);
            out[k] = (fh - fl) / (2.0 * step);
        }
        out
    }

    fn max_rel_err(a: &[f64; 4], n: &[f64; 4]) -> f64 {
        a.iter()
            .zip(n)
            .map(|(x, y)| (x - y).abs() / f64::max(1e-8, x.abs() + y.abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn ciou_gradient_matches_finite_differences() {
        let pred = bb(1.0, 0.5, 2.0, 3.0);
        let g = bb(0.0, 0.0, 2.0, 2.0);
        let analytic = ciou_loss(&pred, &g).gradient;
        let numeric = fd_gradient(&pred, &g, 1e-5);
        assert!(
            max_rel_err(&analytic, &numeric) <= 1e-4,
            "analytic {analytic:?} vs numeric {numeric:?}"
        );
    }

    #[test]
    fn ciou_gradient_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let pred = bb(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(0.5..30.0),
                rng.gen_range(0.5..30.0),
            );
            let g = bb(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(0.5..30.0),
                rng.gen_range(0.5..30.0),
            );
            // Skip configurations within FD reach of a min/max kink.
            let near_kink = [
                pred.x_lo() - g.x_lo(),
                pred.x_hi() - g.x_hi(),
                pred.y_lo() - g.y_lo(),
                pred.y_hi() - g.y_hi(),
                (pred.x_hi().min(g.x_hi()) - pred.x_lo().max(g.x_lo())),
                (pred.y_hi().min(g.y_hi()) - pred.y_lo().max(g.y_lo())),
            ]
            .iter()
            .any(|d| d.abs() < 1e-3);
            if near_kink {
                continue;
            }
            let analytic = ciou_loss(&pred, &g).gradient;
            let numeric = fd_gradient(&pred, &g, 1e-5);
            assert!(
                max_rel_err(&analytic, &numeric) <= 1e-4,
                "pred {pred:?} g {g:?}: {analytic:?} vs {numeric:?}"
            );
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            bcx in -500.0f64..500.0, bcy in -500.0f64..500.0,
            bw in 0.5f64..500.0, bh in 0.5f64..500.0,
            gcx in -500.0f64..500.0, gcy in -500.0f64..500.0,
            gw in 0.5f64..500.0, gh in 0.5f64..500.0,
        ) {
            let b = bb(bcx, bcy, bw, bh);
            let g = bb(gcx, gcy, gw, gh);
            let back = decode(&b, &encode(&b, &g)).unwrap();
            prop_assert!((back.cx - g.cx).abs() <= 1e-9 * g.cx.abs().max(1.0));
            prop_assert!((back.cy - g.cy).abs() <= 1e-9 * g.cy.abs().max(1.0));
            prop_assert!((back.w - g.w).abs() <= 1e-9 * g.w);
            prop_assert!((back.h - g.h).abs() <= 1e-9 * g.h);
        }

        #[test]
        fn joint_translation_invariance_exact(
            // Dyadic coordinates and shifts keep every intermediate sum exact,
            // so the losses must agree bit for bit.
            cx in -102_400i64..102_400, cy in -102_400i64..102_400,
            w in 512i64..512_000, h in 512i64..512_000,
            gx in -102_400i64..102_400, gy in -102_400i64..102_400,
            gw in 512i64..512_000, gh in 512i64..512_000,
            tx in -1_000_000i64..1_000_000, ty in -1_000_000i64..1_000_000,
        ) {
            let q = 1024.0;
            let pred = bb(cx as f64 / q, cy as f64 / q, w as f64 / q, h as f64 / q);
            let g = bb(gx as f64 / q, gy as f64 / q, gw as f64 / q, gh as f64 / q);
            let (tx, ty) = (tx as f64 / 8.0, ty as f64 / 8.0);
            let a = ciou_loss(&pred, &g);
            let b = ciou_loss(&pred.translated(tx, ty), &g.translated(tx, ty));
            prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            prop_assert_eq!(a.gradient, b.gradient);
        }

        #[test]
        fn joint_scale_invariance_of_iou_and_aspect(
            cx in -50.0f64..50.0, cy in -50.0f64..50.0,
            w in 0.5f64..50.0, h in 0.5f64..50.0,
            gx in -50.0f64..50.0, gy in -50.0f64..50.0,
            gw in 0.5f64..50.0, gh in 0.5f64..50.0,
            s in 0.01f64..100.0,
        ) {
            let pred = bb(cx, cy, w, h);
            let g = bb(gx, gy, gw, gh);
            let scaled_pred = bb(cx * s, cy * s, w * s, h * s);
            let scaled_g = bb(gx * s, gy * s, gw * s, gh * s);
            let a = ciou_loss(&pred, &g);
            let b = ciou_loss(&scaled_pred, &scaled_g);
            prop_assert!((a.iou - b.iou).abs() <= 1e-12);
            let va = if a.aspect_term > 0.0 || b.aspect_term > 0.0 {
                (a.aspect_term - b.aspect_term).abs()
            } else { 0.0 };
            prop_assert!(va <= 1e-12);
        }

        #[test]
        fn mirror_covariance_of_encode(
            // Reflecting both boxes about a horizontal axis negates dy and
            // leaves dx, dw, dh untouched — exactly (dyadic coordinates keep
            // every intermediate difference representable).
            bcx in -102_400i64..102_400, bcy in -102_400i64..102_400,
            bw in 512i64..102_400, bh in 512i64..102_400,
            gcx in -102_400i64..102_400, gcy in -102_400i64..102_400,
            gw in 512i64..102_400, gh in 512i64..102_400,
            axis in -400i64..400,
        ) {
            let q = 1024.0;
            let b = bb(bcx as f64 / q, bcy as f64 / q, bw as f64 / q, bh as f64 / q);
            let g = bb(gcx as f64 / q, gcy as f64 / q, gw as f64 / q, gh as f64 / q);
            let axis = axis as f64 / 8.0;
            let mirror = |x: &BBox| BBox { cy: 2.0 * axis - x.cy, ..*x };
            let d = encode(&b, &g);
            let dm = encode(&mirror(&b), &mirror(&g));
            prop_assert_eq!(dm.dx, d.dx);
            prop_assert_eq!(dm.dy, -d.dy);
            prop_assert_eq!(dm.dw, d.dw);
            prop_assert_eq!(dm.dh, d.dh);
        }

        #[test]
        fn loss_bounds(
            cx in -100.0f64..100.0, cy in -100.0f64..100.0,
            w in 0.5f64..100.0, h in 0.5f64..100.0,
            gx in -100.0f64..100.0, gy in -100.0f64..100.0,
            gw in 0.5f64..100.0, gh in 0.5f64..100.0,
        ) {
            let v = ciou_loss(&bb(cx, cy, w, h), &bb(gx, gy, gw, gh));
            prop_assert!(v.loss >= 0.0 && v.loss <= 3.0, "loss {}", v.loss);
            prop_assert!(v.iou >= 0.0 && v.iou <= 1.0);
            prop_assert!(v.center_term >= 0.0 && v.center_term <= 1.0);
            prop_assert!(v.aspect_term >= 0.0);
        }
    }
}
