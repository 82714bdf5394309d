// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};

/// Adam moments and hyper-parameters for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(shape_err!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    if !(0.0..1.0).contains(&state.beta1) || !(0.0..1.0).contains(&state.beta2) {
        return Err(invalid!("adam betas must lie in [0, 1)"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(state.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(state.beta2, f64::from(t));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= state.lr * mhat / (libm::sqrt(vhat) + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_fresh_state_is_identity() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3, 0.1);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, 0.1);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        // -lr * g / (|g| + eps)
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn updates_decay_after_gradient_stops() {
        // frozen from an independent evaluation of the Adam recursion:
        // step2 = 0.0670058, step3 = 0.0517957
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, 0.1);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let mut prev = p[0];
        let mut deltas = vec![];
        for _ in 0..2 {
            adam_step(&mut p, &[0.0], &mut s).unwrap();
            deltas.push((p[0] - prev).abs());
            prev = p[0];
        }
        assert!((deltas[0] - 0.067_005_824).abs() < 1e-8, "{}", deltas[0]);
        assert!((deltas[1] - 0.051_795_696).abs() < 1e-8);
        assert!(deltas[1] < deltas[0]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.5, 0.25];
        let mut s = AdamState::new(2, 0.0);
        for _ in 0..5 {
            adam_step(&mut p, &[3.0, -1.0], &mut s).unwrap();
        }
        assert_eq!(p, vec![0.5, 0.25]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2, 0.1);
        assert!(adam_step(&mut p, &[0.0], &mut s).is_err());
    }
}
