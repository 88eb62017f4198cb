use serde::{Deserialize, Serialize};

use crate::error::{DiuError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// First/second moment estimates for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lengths: &[usize]) -> Self {
        Self {
            step: 0,
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(
    params: &mut [&mut [f32]],
    grads: &[&[f32]],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DiuError::Shape(format!(
            "adam: {} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(DiuError::Shape(format!(
                "adam: tensor {i} has {} values, gradient {}, moments {}",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for j in 0..p.len() {
            let gj = g[j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / correction1) / ((vj / correction2).sqrt() + cfg.adam_eps);
            p[j] = (p[j] as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![0.5f32, -2.0];
        let mut state = AdamState::new(&[2]);
        adam_step(&mut [&mut p], &[&[0.0, 0.0]], &mut state, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_has_unit_normalized_size() {
        let mut p = vec![1.0f32];
        let mut state = AdamState::new(&[1]);
        adam_step(&mut [&mut p], &[&[1.0]], &mut state, 0.1, &AdamConfig::default()).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn state_advances_between_calls() {
        let mut state = AdamState::new(&[1]);
        let cfg = AdamConfig::default();
        let mut a = vec![1.0f32];
        adam_step(&mut [&mut a], &[&[1.0]], &mut state, 0.1, &cfg).unwrap();
        let mut b = vec![1.0f32];
        adam_step(&mut [&mut b], &[&[0.2]], &mut state, 0.1, &cfg).unwrap();
        let mut fresh_state = AdamState::new(&[1]);
        let mut c = vec![1.0f32];
        adam_step(&mut [&mut c], &[&[0.2]], &mut fresh_state, 0.1, &cfg).unwrap();
        assert_ne!(b, c);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![1.0f32; 3];
        let mut state = AdamState::new(&[3]);
        let err = adam_step(&mut [&mut p], &[&[1.0, 2.0]], &mut state, 0.1, &AdamConfig::default());
        assert!(matches!(err, Err(DiuError::Shape(_))));
    }
}
