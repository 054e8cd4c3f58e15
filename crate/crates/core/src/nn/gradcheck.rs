//! Central-difference verification of analytic gradients.

use super::NnError;

/// Compare `analytic` against central differences of `f` around `point`.
///
/// Per coordinate the numeric derivative is `(f(x + step) - f(x - step)) /
/// (2 * step)`; the returned figure is the maximum over coordinates of
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn gradcheck<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<f64, NnError>
where
    F: FnMut(&[f64]) -> f64,
{
    if point.len() != analytic.len() {
        return Err(NnError::ShapeMismatch(format!(
            "gradcheck point has {} coords, analytic gradient {}",
            point.len(),
            analytic.len()
        )));
    }
    let mut buf = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        buf[i] = point[i] + step;
        let fh = f(&buf);
        buf[i] = point[i] - step;
        let fl = f(&buf);
        buf[i] = point[i];
        if !fh.is_finite() || !fl.is_finite() {
            return Err(NnError::NonFinite("gradcheck objective"));
        }
        let numeric = (fh - fl) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / f64::max(1e-8, analytic[i].abs() + numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::{ciou_loss, ciou_loss_alpha_frozen, BBox};

    #[test]
    fn quadratic_is_machine_exact() {
        let err = gradcheck(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err <= 1e-9, "x^2 gradcheck err {err}");
    }

    #[test]
    fn rejects_non_finite_objective() {
        let r = gradcheck(|p| (p[0] - 1.0).ln(), &[1.0], &[0.0], 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(gradcheck(|_| 0.0, &[1.0, 2.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn ciou_loss_over_box_coordinates() {
        let g = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let pred = BBox::new(1.0, 0.5, 2.0, 3.0).unwrap();
        let value = ciou_loss(&pred, &g);
        let err = gradcheck(
            |p| ciou_loss_alpha_frozen(&BBox::new(p[0], p[1], p[2], p[3]).unwrap(), &g, value.alpha),
            &pred.as_array(),
            &value.gradient,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "ciou gradcheck err {err}");
    }
}
