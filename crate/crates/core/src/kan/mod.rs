//! Path-factor regressors: a B-spline KAN and an MLP for ablation.

mod mlp;
mod network;
mod spline;

pub use mlp::MlpNet;
pub use network::{KanLayer, KanNetwork, DEFAULT_SMOOTHNESS, KAN_WIDTHS};
pub use spline::{BasisWindow, SplineGrid, MAX_DEGREE};

use crate::error::{Error, Result};
use crate::numerics::{adam_step, check_finite, AdamState, GradTape, Var};
use crate::schedule::PathSchedule;

/// A scalar network `t ∈ [0, 1] → (0, 1)` trained by regression.
pub trait FactorModel: Clone {
    fn predict(&self, t_norm: f64) -> f64;
    /// Named parameter tensors in the order `params` flattens them.
    fn groups(&self) -> Vec<(String, usize)>;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    /// Record the forward pass; parameters occupy tape slots `0..param_count`.
    fn record(&self, tape: &mut GradTape, t_norm: f64) -> Var;

    fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, n)| n).sum()
    }

    /// The pre-squash output is linear in the parameters at `readout_slots`:
    /// `raw(t) = Σ_k features(t)[k] · params[slots[k]]`.
    fn readout_features(&self, t_norm: f64) -> Vec<f64>;
    fn readout_slots(&self) -> std::ops::Range<usize>;
    /// Curvature penalty on the readout as `(chunk length, weight)`: squared
    /// second differences within each consecutive chunk of readout parameters.
    fn readout_curvature(&self) -> Option<(usize, f64)> {
        None
    }

    /// Penalty added to the training loss, with its gradient.
    fn regularizer(&self) -> (f64, Vec<f64>) {
        (0.0, vec![0.0; self.param_count()])
    }
}

/// Weighted mean squared error and its gradient over all parameters.
pub fn loss_and_grad<M: FactorModel>(model: &M, xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> (f64, Vec<f64>) {
    let mut tape = GradTape::new(model.params());
    let total: f64 = weights.map_or(xs.len() as f64, |w| w.iter().sum());
    let mut terms = Vec::with_capacity(xs.len());
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let out = model.record(&mut tape, x);
        let target = tape.constant(y);
        let diff = tape.sub(out, target);
        let sq = tape.square(diff);
        let w = weights.map_or(1.0, |w| w[i]);
        terms.push(tape.scale(sq, w / total));
    }
    let loss = tape.sum(&terms);
    (tape.value(loss), tape.gradient(loss))
}

/// Weighted mean squared error without gradients.
pub fn mse<M: FactorModel>(model: &M, xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> f64 {
    let total: f64 = weights.map_or(xs.len() as f64, |w| w.iter().sum());
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (&x, &y))| weights.map_or(1.0, |w| w[i]) * (model.predict(x) - y).powi(2))
        .sum::<f64>()
        / total
}

/// Adam state for every parameter tensor of one model.
#[derive(Debug, Clone)]
pub struct Fitter {
    groups: Vec<(String, usize)>,
    states: Vec<AdamState>,
}

impl Fitter {
    pub fn new<M: FactorModel>(model: &M) -> Self {
        let groups = model.groups();
        let states = groups.iter().map(|(_, n)| AdamState::new(*n)).collect();
        Self { groups, states }
    }

    /// Use `eps` as the Adam denominator offset for every tensor.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.states = self.states.into_iter().map(|s| s.with_eps(eps)).collect();
        self
    }

    /// One Adam step on the regression loss; returns the loss before the step.
    pub fn step<M: FactorModel>(
        &mut self,
        model: &mut M,
        xs: &[f64],
        ys: &[f64],
        weights: Option<&[f64]>,
        lr: f64,
    ) -> Result<f64> {
        let (loss, mut grads) = loss_and_grad(model, xs, ys, weights);
        let (_, reg) = model.regularizer();
        // The penalty only acts where the batch reaches, so coefficients outside
        // every sample's support stay put.
        grads.iter_mut().zip(&reg).filter(|(g, _)| **g != 0.0).for_each(|(g, r)| *g += r);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("regression loss {loss}")));
        }
        let mut off = 0;
        for (name, n) in &self.groups {
            check_finite(name, &grads[off..off + n])?;
            off += n;
        }
        let mut params = model.params();
        let mut off = 0;
        for ((name, n), state) in self.groups.iter().zip(&mut self.states) {
            adam_step(name, &mut params[off..off + n], &grads[off..off + n], state, lr)?;
            off += n;
        }
        model.set_params(&params);
        Ok(loss)
    }
}

fn check_fit_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Contract(format!(
            "need matching non-empty inputs, got {} xs and {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(y) = ys.iter().find(|y| !(**y > 0.0 && **y <= 1.0)) {
        return Err(Error::Contract(format!("regression target {y} outside (0, 1]")));
    }
    Ok(())
}

/// Least-squares solve of the readout parameters against `logit(y)` with the
/// hidden layers held fixed. The objective mirrors the training loss: mean
/// squared residual plus the model's readout curvature penalty plus `ridge·|c|²`.
/// Only coefficients whose feature is nonzero at some sample are solved for.
pub fn fit_readout<M: FactorModel>(model: &mut M, xs: &[f64], ys: &[f64], ridge: f64) -> Result<()> {
    check_fit_inputs(xs, ys)?;
    let slots = model.readout_slots();
    let n = slots.len();
    let inv_count = 1.0 / xs.len() as f64;
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut active = vec![false; n];
    for (&x, &y) in xs.iter().zip(ys) {
        let phi = model.readout_features(x);
        active.iter_mut().zip(&phi).for_each(|(a, p)| *a |= *p != 0.0);
        let y = y.clamp(1e-9, 1.0 - 1e-9);
        let logit = (y / (1.0 - y)).ln();
        for i in 0..n {
            rhs[i] += inv_count * phi[i] * logit;
            for j in 0..n {
                gram[i * n + j] += inv_count * phi[i] * phi[j];
            }
        }
    }
    if let Some((chunk, weight)) = model.readout_curvature() {
        for start in (0..n).step_by(chunk) {
            for k in start + 1..(start + chunk).min(n) - 1 {
                let stencil = [(k - 1, 1.0), (k, -2.0), (k + 1, 1.0)];
                for (i, a) in stencil {
                    for (j, b) in stencil {
                        gram[i * n + j] += weight * a * b;
                    }
                }
            }
        }
    }
    for i in 0..n {
        gram[i * n + i] += ridge;
    }
    // Coefficients no sample reaches keep their values.
    let mut params = model.params();
    let current = params[slots.clone()].to_vec();
    for i in 0..n {
        if active[i] {
            continue;
        }
        for j in 0..n {
            if j != i {
                rhs[j] -= gram[j * n + i] * current[i];
                gram[j * n + i] = 0.0;
                gram[i * n + j] = 0.0;
            }
        }
        gram[i * n + i] = 1.0;
        rhs[i] = current[i];
    }
    let coefs = solve_spd(gram, rhs)?;
    params[slots].copy_from_slice(&coefs);
    model.set_params(&params);
    Ok(())
}

/// Diagonal load of the readout solve; keeps it well posed when the hidden
/// features are nearly collinear.
pub const READOUT_RIDGE: f64 = 1e-10;

/// Cholesky solve of a symmetric positive definite system (row-major).
fn solve_spd(mut m: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::NonFinite(format!("readout system not positive definite at row {j}")));
        }
        let d = d.sqrt();
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= m[i * n + k] * b[k];
        }
        b[i] = s / m[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= m[k * n + i] * b[k];
        }
        b[i] = s / m[i * n + i];
    }
    Ok(b)
}

/// Fit `model(x) ≈ y`: warm-start the readout by [`fit_readout`], then run
/// full-batch Adam with the learning rate annealed by a cosine from `lr` to
/// `lr / 100`, keeping the parameters with the lowest penalized loss seen.
/// Returns their mean squared error.
pub fn kan_fit<M: FactorModel>(model: &mut M, xs: &[f64], ys: &[f64], epochs: usize, lr: f64) -> Result<f64> {
    check_fit_inputs(xs, ys)?;
    fit_readout(model, xs, ys, READOUT_RIDGE)?;
    let objective = |m: &M| {
        let loss = mse(m, xs, ys, None);
        (loss + m.regularizer().0, loss)
    };
    let (value, loss) = objective(model);
    let mut best = (value, loss, model.params());
    let mut fitter = Fitter::new(model);
    for e in 0..=epochs {
        let (value, loss) = objective(model);
        if value < best.0 {
            best = (value, loss, model.params());
        }
        if e == epochs {
            break;
        }
        let progress = e as f64 / epochs.max(1) as f64;
        let rate = lr * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        fitter.step(model, xs, ys, None, rate)?;
    }
    if !best.1.is_finite() {
        return Err(Error::NonFinite(format!("final regression loss {}", best.1)));
    }
    model.set_params(&best.2);
    Ok(best.1)
}

/// Interior factor targets `(t/T, A(t))` and `(t/T, B(t))` for `t = 1..T-1`.
pub fn interior_factors(path: &PathSchedule) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t_max = path.steps();
    let xs = (1..t_max).map(|t| path.state_time(t)).collect();
    let a = (1..t_max).map(|t| path.factors_a()[t]).collect();
    let b = (1..t_max).map(|t| path.factors_b()[t]).collect();
    (xs, a, b)
}

/// Replace the interior factors of `base` with network predictions; the
/// anchor factors `A(0)`, `A(T)`, `B(0)`, `B(T)` are copied from `base`.
pub fn kan_predict_schedule<M: FactorModel>(net_a: &M, net_b: &M, base: &PathSchedule) -> Result<PathSchedule> {
    let t_max = base.steps();
    let mut a = base.factors_a().to_vec();
    let mut b = base.factors_b().to_vec();
    for t in 1..t_max {
        let x = base.state_time(t);
        a[t] = net_a.predict(x);
        b[t] = net_b.predict(x);
    }
    Ok(PathSchedule::from_factors(base.map().clone(), a, b)?.with_direction(base.direction()))
}
