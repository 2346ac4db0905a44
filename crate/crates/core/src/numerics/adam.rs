use serde::{Deserialize, Serialize};

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Defaults for the Bernoulli policy logits. Adam moves a logit by about
    /// `lr` per step, and starting from `logit(0.1)` a head needs a few dozen
    /// steps to cross one half, so the rate has to be large.
    pub fn policy() -> Self {
        Self {
            lr: 3e-1,
            ..Self::training()
        }
    }

    /// Defaults for model weights.
    pub fn training() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and step counter for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            config,
        }
    }

    /// Bias-corrected Adam update applied to `params` in place, with the
    /// learning rate overridden by `lr` (used by warmup schedules).
    pub fn step_with_lr(&mut self, params: &mut [T], grad: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state holds {} elements, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NumericDomain("adam gradient contains NaN or Inf".into()));
        }
        self.t += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::of(lr);
        let eps = T::of(c.eps);
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step_in_place(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grad, lr)
    }
}

/// One Adam step as a pure function: returns the new parameters and state,
/// leaving the inputs untouched.
pub fn adam_step<T: Scalar>(
    state: &AdamState<T>,
    params: &Matrix<T>,
    grad: &Matrix<T>,
) -> Result<(Matrix<T>, AdamState<T>)> {
    if params.shape() != grad.shape() || params.shape() != state.m.shape() {
        return Err(Error::Shape(format!(
            "adam shapes disagree: params {:?}, grad {:?}, state {:?}",
            params.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    let mut next = state.clone();
    let mut out = params.clone();
    next.step_in_place(out.as_mut_slice(), grad.as_slice())?;
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AdamConfig {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let state = AdamState::<f64>::new(2, 3, cfg());
        let p = Matrix::from_fn(2, 3, |r, c| (r + c) as f64);
        let (q, next) = adam_step(&state, &p, &Matrix::zeros(2, 3)).unwrap();
        assert_eq!(p, q);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn scalar_trace_matches_hand_computation() {
        // Reference trace evaluated at 40 digits: (update, param) per step,
        // grads 0.5, 0.5, -2.0 starting from param 1.0.
        let want = [
            (0.009999999800000004, 0.9900000002),
            (0.009999999800000004, 0.9800000004),
            (-0.003448335883467879, 0.9834483362834678),
        ];
        let mut state = AdamState::<f64>::new(1, 1, cfg());
        let mut p = Matrix::filled(1, 1, 1.0);
        for (g, (du, dp)) in [0.5, 0.5, -2.0].into_iter().zip(want) {
            let (q, s) = adam_step(&state, &p, &Matrix::filled(1, 1, g)).unwrap();
            let update = p.get(0, 0) - q.get(0, 0);
            assert!((update - du).abs() < 1e-15, "{update} vs {du}");
            assert!((q.get(0, 0) - dp).abs() < 1e-15);
            p = q;
            state = s;
        }
        assert_eq!(state.t, 3);
    }

    #[test]
    fn bitwise_deterministic() {
        let state = AdamState::<f32>::new(3, 3, cfg());
        let p = Matrix::from_fn(3, 3, |r, c| (r as f32 - c as f32) * 0.3);
        let g = Matrix::from_fn(3, 3, |r, c| (r * c) as f32 * 0.1 - 0.2);
        let a = adam_step(&state, &p, &g).unwrap();
        let b = adam_step(&state, &p, &g).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let state = AdamState::<f64>::new(1, 2, cfg());
        let p = Matrix::zeros(1, 2);
        assert!(matches!(adam_step(&state, &p, &Matrix::zeros(2, 1)), Err(Error::Shape(_))));
        let bad = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(adam_step(&state, &p, &bad), Err(Error::NumericDomain(_))));
    }
}
