//! Bias-corrected Adam updates over flat parameter buffers.

use crate::error::{Error, Result};

/// Hyperparameters. The defaults are the standard robust choice.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers plus the step counter, one per parameter
/// buffer. The counter advances by exactly one per update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected update in place. A non-finite gradient aborts the
/// step before any state is touched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "adam buffers disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite gradient at coordinate {i}: {}",
            grads[i]
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_fixed() {
        let mut params = vec![0.3, -1.2, 4.0];
        let mut state = AdamState::new(3);
        let cfg = AdamConfig::with_lr(0.01);
        for _ in 0..10 {
            adam_step(&mut params, &[0.0; 3], &mut state, &cfg).unwrap();
        }
        assert_eq!(params, vec![0.3, -1.2, 4.0]);
        assert_eq!(state.step, 10);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let cfg = AdamConfig::with_lr(0.01);
        let mut last = 0.0;
        for _ in 0..50 {
            adam_step(&mut params, &[2.5], &mut state, &cfg).unwrap();
            assert!(params[0] < last, "positive gradient must decrease the parameter");
            last = params[0];
        }
    }

    #[test]
    fn scalar_quadratic_converges() {
        // Minimize w^2 from w = 3 at lr 1e-2; gradient 2w.
        let mut params = vec![3.0];
        let mut state = AdamState::new(1);
        let cfg = AdamConfig::with_lr(1e-2);
        let mut reached = false;
        for _ in 0..2000 {
            let g = [2.0 * params[0]];
            adam_step(&mut params, &g, &mut state, &cfg).unwrap();
            if params[0].abs() < 1e-2 {
                reached = true;
            }
        }
        assert!(reached, "|w| never dropped below 1e-2 within 2000 steps (final {})", params[0]);
        assert!(params[0].abs() < 1e-2, "w did not stay near the optimum: {}", params[0]);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        let cfg = AdamConfig::default();
        let err = adam_step(&mut params, &[f64::NAN], &mut state, &cfg);
        assert!(matches!(err, Err(crate::error::Error::Numeric(_))));
        assert_eq!(params, vec![1.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn step_counter_increments_once_per_update() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &[0.1], &mut state, &cfg).unwrap();
        adam_step(&mut params, &[0.1], &mut state, &cfg).unwrap();
        assert_eq!(state.step, 2);
    }
}
