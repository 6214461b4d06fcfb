use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            eps: ADAM_EPS,
        }
    }

    /// Replace the denominator offset; a larger value damps steps driven by
    /// gradients far below it.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Check a gradient before any parameter is touched.
pub fn check_finite(name: &str, grads: &[f64]) -> Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { param: name.to_string() })
    }
}

/// One Adam update of `params` in place. A non-finite gradient rejects the
/// whole step and leaves both `params` and `state` untouched.
pub fn adam_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam shapes disagree for `{name}`: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
    }
    check_finite(name, grads)?;

    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Central finite-difference gradient `(f(x+h) - f(x-h)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0];
        let mut st = AdamState::new(2);
        adam_step("p", &mut p, &[0.0, 0.0], &mut st, 0.1).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step("p", &mut p, &[1.0], &mut st, 0.1).unwrap();
        assert!((p[0] + 0.1 / (1.0 + ADAM_EPS)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_parabola() {
        let mut x = vec![1.0];
        let mut st = AdamState::new(1);
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            adam_step("x", &mut x, &g, &mut st, 0.1).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_name() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        let err = adam_step("kan.layer3", &mut p, &[0.1, f64::NAN], &mut st, 0.1).unwrap_err();
        match err {
            Error::NonFiniteGradient { param } => assert_eq!(param, "kan.layer3"),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.steps_taken(), 0);
    }

    #[test]
    fn finite_difference_of_square() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_difference_of_constant() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -1.0, 0.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_difference_rejects_non_finite() {
        assert!(finite_diff_grad(|x| 1.0 / x[0], &[0.0], 0.0).is_err());
        assert!(finite_diff_grad(|x| (x[0] - 1e-6).ln(), &[0.0], 1e-5).is_err());
    }
}
