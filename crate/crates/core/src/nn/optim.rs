//! SGD with momentum and weight decay, plus a reduce-on-plateau schedule.

use super::NnError;

/// Elementwise SGD update:
///
/// ```text
/// g' = g + weight_decay * w
/// v  = momentum * v + g'
/// w  = w - lr * v
/// ```
pub fn sgd_step(
    w: &mut [f64],
    g: &[f64],
    v: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), NnError> {
    if w.len() != g.len() || w.len() != v.len() {
        return Err(NnError::ShapeMismatch(format!(
            "sgd buffers disagree: w {}, g {}, v {}",
            w.len(),
            g.len(),
            v.len()
        )));
    }
    for i in 0..w.len() {
        let gp = g[i] + weight_decay * w[i];
        v[i] = momentum * v[i] + gp;
        w[i] -= lr * v[i];
    }
    Ok(())
}

/// Optimizer state across a set of parameter slots.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self, NnError> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(NnError::InvalidOptimizer(format!("lr {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NnError::InvalidOptimizer(format!("momentum {momentum}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(NnError::InvalidOptimizer(format!("weight decay {weight_decay}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Update one parameter slot; velocity buffers are allocated on first use.
    pub fn step(&mut self, slot: usize, w: &mut [f64], g: &[f64]) -> Result<(), NnError> {
        while self.velocity.len() <= slot {
            self.velocity.push(Vec::new());
        }
        let v = &mut self.velocity[slot];
        if v.is_empty() {
            v.resize(w.len(), 0.0);
        }
        sgd_step(w, g, v, self.lr, self.momentum, self.weight_decay)
    }
}

/// Reduce-on-plateau learning-rate schedule.
///
/// `best` tracks the running minimum of the epoch loss. An epoch counts as a
/// stall unless it improves on `best` by more than `min_delta`; after
/// `patience` consecutive stalls the learning rate is multiplied by `factor`
/// and the stall counter resets.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    stall: usize,
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: usize, min_delta: f64) -> Result<Self, NnError> {
        if !(factor.is_finite() && factor > 0.0 && factor < 1.0) {
            return Err(NnError::InvalidSchedule(format!("factor {factor}")));
        }
        if patience == 0 {
            return Err(NnError::InvalidSchedule("patience must be >= 1".into()));
        }
        if !(min_delta.is_finite() && min_delta >= 0.0) {
            return Err(NnError::InvalidSchedule(format!("min_delta {min_delta}")));
        }
        Ok(Self {
            factor,
            patience,
            min_delta,
            best: f64::INFINITY,
            stall: 0,
        })
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feed one epoch loss; returns the (possibly reduced) learning rate.
    pub fn update(&mut self, epoch_loss: f64, lr: f64) -> Result<f64, NnError> {
        if !epoch_loss.is_finite() {
            return Err(NnError::NonFinite("plateau epoch loss"));
        }
        let mut lr = lr;
        if epoch_loss < self.best - self.min_delta {
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall >= self.patience {
                lr *= self.factor;
                self.stall = 0;
            }
        }
        if epoch_loss < self.best {
            self.best = epoch_loss;
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sgd_plain_step() {
        let mut w = [1.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.5], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_relative_eq!(w[0], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn sgd_weight_decay() {
        // g' = 0.5 + 0.0005 * 1 = 0.5005, w = 1 - 0.05005 = 0.94995.
        let mut w = [1.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.5], &mut v, 0.1, 0.0, 0.0005).unwrap();
        assert_relative_eq!(w[0], 0.94995, epsilon = 1e-15);
    }

    #[test]
    fn sgd_momentum_recursion() {
        // Two steps at constant g = 1: v1 = 1, w1 = -0.1; v2 = 1.9, w2 = -0.29.
        let mut w = [0.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_relative_eq!(w[0], -0.1, epsilon = 1e-15);
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_relative_eq!(v[0], 1.9, epsilon = 1e-15);
        assert_relative_eq!(w[0], -0.29, epsilon = 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_noop() {
        let mut w = [1.25, -3.5];
        let mut v = [0.0, 0.0];
        sgd_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w, [1.25, -3.5]);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut w = [1.0];
        let mut v = [0.0];
        assert!(sgd_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn optimizer_validation() {
        assert!(SgdState::new(0.0, 0.9, 0.0).is_err());
        assert!(SgdState::new(0.1, 1.0, 0.0).is_err());
        assert!(SgdState::new(0.1, -0.1, 0.0).is_err());
        assert!(SgdState::new(0.1, 0.9, -1.0).is_err());
        assert!(SgdState::new(0.001, 0.9, 0.0005).is_ok());
    }

    #[test]
    fn plateau_improving_run_keeps_lr() {
        let mut s = PlateauSchedule::new(0.1, 3, 1e-4).unwrap();
        let mut lr = 0.001;
        for loss in [1.0, 0.5, 0.4] {
            lr = s.update(loss, lr).unwrap();
        }
        assert_eq!(lr, 0.001);
    }

    #[test]
    fn plateau_drops_after_three_stalls() {
        let mut s = PlateauSchedule::new(0.1, 3, 1e-4).unwrap();
        let mut lr = 0.001;
        lr = s.update(1.0, lr).unwrap();
        lr = s.update(1.0, lr).unwrap();
        lr = s.update(1.0, lr).unwrap();
        assert_eq!(lr, 0.001);
        lr = s.update(1.0, lr).unwrap();
        assert_relative_eq!(lr, 0.0001, epsilon = 1e-18);
    }

    #[test]
    fn plateau_small_improvements_still_stall() {
        // Every improvement is below min_delta, so the third stall drops lr
        // even though the loss decreases monotonically.
        let mut s = PlateauSchedule::new(0.1, 3, 0.2).unwrap();
        let mut lr = 0.01;
        lr = s.update(1.0, lr).unwrap();
        lr = s.update(0.9, lr).unwrap();
        assert_eq!(lr, 0.01);
        lr = s.update(0.8, lr).unwrap();
        assert_eq!(lr, 0.01);
        lr = s.update(0.7, lr).unwrap();
        assert_relative_eq!(lr, 0.001, epsilon = 1e-18);
    }
}
