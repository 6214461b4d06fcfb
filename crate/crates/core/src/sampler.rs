//! Forward diffusion along a path and deterministic reverse sampling.

use crate::data::{fmt_sig9, gaussian_sample, Point2};
use crate::denoiser::{ddim_from_prediction, fm_from_prediction, Denoise, PredictionMode};
use crate::error::{Error, Result};
use crate::schedule::{normalize_sum_to_one, Direction, PathSchedule};
use std::io::Write;

/// One chain `x_0..x_T` together with the noise behind each state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Point2>,
    /// Forward chains: the drawn `ε` at every state. Reverse chains: the
    /// network's noise estimate at each state `t ≥ 1`; entry 0 repeats entry 1.
    pub eps: Vec<Point2>,
    pub direction: Direction,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Prior draw the chain started from (reverse) or ended at (forward).
    pub fn prior(&self) -> Point2 {
        match self.direction {
            Direction::Forward => self.eps[0],
            Direction::Reverse => *self.states.last().unwrap(),
        }
    }
}

/// `x_t = f_A(t)·x_0 + f_B(t)·ε` at every state of `path`.
pub fn forward_sample(path: &PathSchedule, x0: Point2, eps: Point2) -> Trajectory {
    let states = path.fa().iter().zip(path.fb()).map(|(&a, &b)| a * x0 + b * eps).collect();
    Trajectory {
        states,
        eps: vec![eps; path.steps() + 1],
        direction: Direction::Forward,
    }
}

/// Samples from `n` prior draws under `seed`; see [`reverse_from`].
pub fn reverse_sample<D: Denoise + ?Sized>(
    path: &PathSchedule,
    net: &D,
    n: usize,
    seed: u64,
    rescale: bool,
) -> Result<(Vec<Point2>, Vec<Trajectory>)> {
    let priors = gaussian_sample(n, seed)?;
    let trajectories = reverse_from(path, net, &priors, rescale)?;
    let samples = trajectories.iter().map(|tr| tr.states[0]).collect();
    Ok((samples, trajectories))
}

/// Deterministic reverse chains from the given `x_T`: at each `t = T..1` the
/// endpoint estimate `(x̂_0, ε̂)` is re-projected onto the path at `t − 1`.
/// In direction mode with `rescale`, both steps use the path rescaled to unit
/// weight sum.
pub fn reverse_from<D: Denoise + ?Sized>(
    path: &PathSchedule,
    net: &D,
    priors: &[Point2],
    rescale: bool,
) -> Result<Vec<Trajectory>> {
    let t_max = path.steps();
    let mode = net.mode();
    let weights = if mode == PredictionMode::DirectionPrediction && rescale {
        normalize_sum_to_one(path)?
    } else {
        path.clone()
    };
    let n = priors.len();
    let mut states = vec![vec![Point2::ZERO; t_max + 1]; n];
    let mut eps = vec![vec![Point2::ZERO; t_max + 1]; n];
    let mut current = priors.to_vec();
    for (chain, &x) in states.iter_mut().zip(priors) {
        chain[t_max] = x;
    }
    for t in (1..=t_max).rev() {
        let preds = net.predict_batch(&current, path.map().time(t));
        let (fa_prev, fb_prev) = weights.weights_at(t - 1)?;
        for (i, (x, pred)) in current.iter_mut().zip(preds).enumerate() {
            let est = match mode {
                PredictionMode::NoisePrediction => ddim_from_prediction(*x, pred, t, &weights),
                PredictionMode::DirectionPrediction => fm_from_prediction(*x, pred, t, &weights),
            }
            .map_err(|e| Error::Step {
                step: t,
                source: Box::new(e),
            })?;
            *x = fa_prev * est.x0_hat + fb_prev * est.eps_hat;
            if !x.is_finite() {
                return Err(Error::Step {
                    step: t,
                    source: Box::new(Error::NonFinite(format!("chain {i}"))),
                });
            }
            states[i][t - 1] = *x;
            eps[i][t] = est.eps_hat;
        }
    }
    Ok(states
        .into_iter()
        .zip(eps)
        .map(|(states, mut eps)| {
            if t_max >= 1 {
                eps[0] = eps[1];
            }
            Trajectory {
                states,
                eps,
                direction: Direction::Reverse,
            }
        })
        .collect())
}

/// CSV with columns `chain,t,x,y`.
pub fn write_trajectories_csv<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    writeln!(w, "chain,t,x,y")?;
    for (c, tr) in trajectories.iter().enumerate() {
        for (t, p) in tr.states.iter().enumerate() {
            writeln!(w, "{c},{t},{},{}", fmt_sig9(p.x), fmt_sig9(p.y))?;
        }
    }
    Ok(())
}
