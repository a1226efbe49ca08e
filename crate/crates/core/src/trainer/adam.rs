//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{Gradients, Parameters};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &Parameters<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.values.len()])
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam step at learning rate `lr`:
///
/// ```text
/// m ← β₁ m + (1 − β₁) g
/// v ← β₂ v + (1 − β₂) g²
/// θ ← θ − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
/// ```
pub fn adam_update<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TrainError> {
    let shapes_match = grads.values.len() == params.len()
        && state.m.len() == params.len()
        && params
            .tensors()
            .iter()
            .zip(&grads.values)
            .zip(&state.m)
            .all(|((p, g), m)| p.values.len() == g.len() && m.len() == g.len());
    if !shapes_match {
        return Err(TrainError::ShapeMismatch(
            "gradients or optimizer state do not match the parameters".into(),
        ));
    }
    if let Some((i, _)) = grads
        .values
        .iter()
        .enumerate()
        .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(TrainError::NonFiniteGradient(params.tensors()[i].name.clone()));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let one = T::one();
    let corr1 = T::lit(1.0 - c.beta1.powi(t));
    let corr2 = T::lit(1.0 - c.beta2.powi(t));
    let lr = T::lit(lr);
    let eps = T::lit(c.epsilon);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&grads.values)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..g.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64) -> Parameters<f64> {
        let mut p = Parameters::new();
        p.push("w".into(), vec![1], vec![value]);
        p
    }

    #[test]
    fn zero_gradient_from_rest_leaves_parameters() {
        let mut p = scalar_param(0.5);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let g = Gradients { values: vec![vec![0.0]] };
        adam_update(&mut p, &g, &mut s, 1e-3).unwrap();
        assert_eq!(p.values(0), &[0.5]);
        assert_eq!(s.m[0][0], 0.0);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = scalar_param(0.5);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_update(&mut p, &Gradients { values: vec![vec![2.0]] }, &mut s, 1e-3).unwrap();
        let (m0, v0) = (s.m[0][0], s.v[0][0]);
        adam_update(&mut p, &Gradients { values: vec![vec![0.0]] }, &mut s, 1e-3).unwrap();
        assert!((s.m[0][0] - 0.9 * m0).abs() < 1e-15);
        assert!((s.v[0][0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.01, 3.0, -250.0] {
            let mut p = scalar_param(1.0);
            let mut s = AdamState::new(AdamConfig::default(), &p);
            adam_update(&mut p, &Gradients { values: vec![vec![g]] }, &mut s, 1e-4).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·|g|/(|g|+ε).
            let expected = 1e-4 * g.abs() / (g.abs() + 1e-8);
            let moved = (1.0 - p.values(0)[0]).abs();
            assert!((moved - expected).abs() < 1e-15);
            assert!((moved - 1e-4).abs() < 1e-9);
            assert_eq!((1.0 - p.values(0)[0]).signum(), g.signum());
        }
    }

    #[test]
    fn constant_gradient_keeps_step_near_learning_rate() {
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let mut prev = 0.0;
        for _ in 0..50 {
            adam_update(&mut p, &Gradients { values: vec![vec![0.3]] }, &mut s, 1e-3).unwrap();
            let cur = p.values(0)[0];
            assert!(((prev - cur) - 1e-3).abs() < 1e-8);
            prev = cur;
        }
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let bad = Gradients { values: vec![vec![0.0, 1.0]] };
        assert!(matches!(adam_update(&mut p, &bad, &mut s, 1e-3), Err(TrainError::ShapeMismatch(_))));
        let nan = Gradients { values: vec![vec![f64::NAN]] };
        assert!(matches!(adam_update(&mut p, &nan, &mut s, 1e-3), Err(TrainError::NonFiniteGradient(_))));
        assert_eq!(s.step, 0);
    }
}
