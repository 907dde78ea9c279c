//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{layer_specs, ModelParams, UNetConfig};
use crate::tensor::Scalar;

use super::TrainConfig;

/// First/second moment estimates, one slot per learnable tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: &UNetConfig) -> Result<Self> {
        let mut m = BTreeMap::new();
        for spec in layer_specs(config) {
            if spec.learnable {
                m.insert(spec.name.clone(), vec![0.0; params.get(&spec.name)?.len()]);
            }
        }
        let v = m.clone();
        Ok(AdamState { m, v })
    }
}

/// One Adam update on a flat parameter slice. `step_index` starts at 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update_slice<E: Scalar>(
    param: &mut [E],
    grad: &[E],
    m: &mut [E],
    v: &mut [E],
    learning_rate: E,
    beta1: E,
    beta2: E,
    epsilon: E,
    step_index: usize,
) {
    debug_assert!(step_index >= 1);
    let one = E::one();
    let bias1 = one - beta1.powi(step_index as i32);
    let bias2 = one - beta2.powi(step_index as i32);
    for i in 0..param.len() {
        m[i] = beta1 * m[i] + (one - beta1) * grad[i];
        v[i] = beta2 * v[i] + (one - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Apply one Adam step to every learnable tensor that has a gradient.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut AdamState,
    config: &TrainConfig,
    step_index: usize,
) -> Result<()> {
    if step_index < 1 {
        return Err(Error::Usage("Adam step_index starts at 1".into()));
    }
    for (name, grad) in grads {
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("no optimizer state for {name:?}")))?;
        let v = state.v.get_mut(name).expect("m and v share keys");
        let param = params.get_mut(name)?;
        if grad.len() != param.len() || m.len() != param.len() {
            return Err(Error::Usage(format!(
                "optimizer state/gradient length mismatch for {name:?}"
            )));
        }
        adam_update_slice(
            param.data_mut(),
            grad,
            m,
            v,
            config.learning_rate as f32,
            config.beta1 as f32,
            config.beta2 as f32,
            config.epsilon as f32,
            step_index,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn zero_gradient_from_fresh_state_leaves_parameters_unchanged() {
        let mut p = [1.0f64, -2.0, 0.5];
        let g = [0.0f64; 3];
        let mut m = [0.0f64; 3];
        let mut v = [0.0f64; 3];
        adam_update_slice(&mut p, &g, &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, 1);
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // Hand evaluation: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1,
        // update = lr / (1 + eps) ~= lr.
        let mut p = [1.0f64];
        let g = [1.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adam_update_slice(&mut p, &g, &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, 1);
        assert!((p[0] - 0.9).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn two_hundred_steps_minimize_a_quadratic() {
        // f(w) = (w - 3)^2 from w = 0 at lr 0.1.
        let mut w = [0.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        for step in 1..=200 {
            let g = [2.0 * (w[0] - 3.0)];
            adam_update_slice(&mut w, &g, &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, step);
        }
        assert!((w[0] - 3.0).abs() < 0.05, "w = {}", w[0]);
    }

    #[test]
    fn model_level_step_rejects_unknown_tensors() {
        let cfg = UNetConfig {
            depth: 1,
            base_filters: 1,
            input_frames: 2,
            input_bins: 2,
            ..UNetConfig::default()
        };
        let mut params = init_params(&cfg, 0).unwrap();
        let mut state = AdamState::new(&params, &cfg).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("nonexistent.kernel".to_string(), vec![0.0f32]);
        let err = adam_step(&mut params, &grads, &mut state, &TrainConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
