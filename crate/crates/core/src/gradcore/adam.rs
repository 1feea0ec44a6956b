use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Moment estimates and hyperparameters for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Defaults `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// `lr` overrides the state's base rate when a schedule is in use. The step
/// is rejected before anything is written if any gradient is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: Option<f64>) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Length { expected: params.len(), actual: grads.len() });
    }
    if state.m.len() != params.len() {
        return Err(Error::Length { expected: params.len(), actual: state.m.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "adam_step" });
    }
    let lr = lr.unwrap_or(state.lr);
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, state.t as f64);
    let c2 = 1.0 - libm::pow(b2, state.t as f64);
    for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (libm::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_but_advances_counter() {
        let mut w = vec![1.0, -2.0, 3.5];
        let mut st = AdamState::new(3, 1e-3);
        adam_step(&mut w, &[0.0; 3], &mut st, None).unwrap();
        assert_eq!(w, vec![1.0, -2.0, 3.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1, so Δw = -lr / (1 + ε).
        let mut w = vec![0.0];
        let mut st = AdamState::new(1, 1e-3);
        adam_step(&mut w, &[1.0], &mut st, None).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_descend_a_quadratic() {
        let loss = |w: &[f64]| (w[0] - 3.0).powi(2) + 2.0 * (w[1] + 1.0).powi(2);
        let grad = |w: &[f64]| vec![2.0 * (w[0] - 3.0), 4.0 * (w[1] + 1.0)];
        let mut w = vec![0.0, 0.0];
        let mut st = AdamState::new(2, 0.1);
        let before = loss(&w);
        for _ in 0..2 {
            let g = grad(&w);
            adam_step(&mut w, &g, &mut st, None).unwrap();
        }
        assert!(loss(&w) < before);
    }

    #[test]
    fn rejects_bad_input() {
        let mut w = vec![0.0; 2];
        let mut st = AdamState::new(2, 1e-3);
        assert!(adam_step(&mut w, &[1.0], &mut st, None).is_err());
        assert!(adam_step(&mut w, &[1.0, f64::NAN], &mut st, None).is_err());
        assert_eq!(st.t, 0);
        assert_eq!(w, vec![0.0; 2]);
    }
}
