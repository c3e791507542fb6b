use serde::{Deserialize, Serialize};

use super::{ModelError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], step: 0 }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching anything.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), ModelError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(ModelError::Shape("adam: parameter, gradient and moment lengths differ".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { index: i });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::one() - T::lit(cfg.beta1.powi(t));
    let bc2 = T::one() - T::lit(cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0, 3.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + eps)
        assert!((p[0] + cfg.lr / (1.0 + cfg.eps)).abs() < 1e-15);
    }

    #[test]
    fn ten_steps_match_hand_rolled_reference() {
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let grad = |x: f64| 2.0 * (x - 3.0) + 0.5 * x.cos();
        // Reference written out with explicit powers.
        let (mut x_ref, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        let mut want = vec![];
        for t in 1..=10 {
            let g = grad(x_ref);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x_ref -= 0.05 * mh / (vh.sqrt() + 1e-8);
            want.push(x_ref);
        }
        let mut x = vec![0.7f64];
        let mut s = AdamState::new(1);
        for w in want {
            let g = [grad(x[0])];
            adam_step(&mut x, &g, &mut s, &cfg).unwrap();
            assert!((x[0] - w).abs() < 1e-14);
        }
        assert_eq!(s.step, 10);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![1.0f32, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut p, &[0.1, f32::NAN], &mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteGradient { index: 1 }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.step, 0);
    }
}
