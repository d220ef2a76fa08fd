//! Adam with bias correction, shared by the explainer and the trainer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Step hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    /// Step size.
    pub lr: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Denominator guard.
    pub eps: f64,
}

impl AdamParams {
    /// Standard decays (0.9, 0.999, 1e-8) with the given step size.
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    /// Fresh state for `n` parameters.
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update in place. The step counter advances first, so the first
/// call uses `t = 1`. A non-finite gradient leaves everything untouched and
/// returns [`Error::NonFinite`].
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() {
        return Err(shape_err("adam_step", &[params.len()], &[grad.len()]));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration: state.t as usize,
        });
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(hp.beta1, t);
    let c2 = 1.0 - libm::pow(hp.beta2, t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hp.lr * m_hat / (libm::sqrt(v_hat) + hp.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [0.3, -1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamParams::with_lr(0.1)).unwrap();
        assert_eq!(p, [0.3, -1.0]);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &AdamParams::with_lr(0.1)).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        let r = adam_step(&mut p, &[f64::NAN], &mut s, &AdamParams::with_lr(0.1));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
        assert_eq!(p, [1.0]);
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s, &AdamParams::with_lr(0.1)).is_err());
    }
}
