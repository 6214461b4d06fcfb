//! Alternating path fitting against a frozen denoiser.
//!
//! Each phase holds one path fixed (`prev`) and fits the factors of the other
//! (`curr`) so that moving from `x_{t+1}` on `prev` to step `t` on `curr`,
//! through the recovered endpoint `x̃_0`, lands on the sampled `x_t`. Reverse
//! phases fit the sampling path to forward-noised data; forward phases fit the
//! noising path to the sampler's own rollouts.

use crate::data::{seeded_rng, Point2};
use crate::denoiser::{noise_estimates, Denoise};
use crate::error::{Error, Result};
use crate::kan::{interior_factors, kan_fit, kan_predict_schedule, FactorModel, Fitter, KanNetwork, MlpNet};
use crate::sampler::reverse_from;
use crate::schedule::{Direction, PathSchedule, FACTOR_FLOOR};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Epochs over which a phase must improve its loss by `plateau_tol`.
pub const PLATEAU_WINDOW: usize = 20;

/// A phase aborts when more than this fraction of its samples is skipped.
pub const MAX_SKIP_FRACTION: f64 = 0.5;

/// Adam offset for phase fits. Targets sit on the current factors at a fixed
/// point, where gradients are round-off; the default offset would still turn
/// those into full-size steps.
pub const PHASE_ADAM_EPS: f64 = 1e-6;

/// Network family used to predict the path factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    #[default]
    Kan,
    /// Perceptron with at most the KAN's parameter count.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpfConfig {
    /// Outer iterations; each runs one reverse and one forward phase.
    #[serde(rename = "L")]
    pub iterations: usize,
    pub epochs_per_phase: usize,
    /// Chains drawn at the start of a phase and reused by all its epochs.
    pub batch_size: usize,
    pub lr_a: f64,
    pub lr_b: f64,
    pub plateau_tol: f64,
    pub denom_guard: f64,
    /// Initial fit of the factor networks to the starting path.
    pub prefit_epochs: usize,
    pub prefit_lr: f64,
    /// Read direction predictions against unit-sum weights, as the sampler does.
    pub rescale: bool,
    pub predictor: Predictor,
    pub seed: u64,
}

impl Default for IpfConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            epochs_per_phase: 200,
            batch_size: 1024,
            lr_a: 2e-6,
            lr_b: 2e-6,
            plateau_tol: 1e-6,
            denom_guard: 1e-6,
            prefit_epochs: 2000,
            prefit_lr: 1e-2,
            rescale: true,
            predictor: Predictor::Kan,
            seed: 0,
        }
    }
}

impl IpfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_a", self.lr_a),
            ("lr_b", self.lr_b),
            ("plateau_tol", self.plateau_tol),
            ("denom_guard", self.denom_guard),
            ("prefit_lr", self.prefit_lr),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!("{name} must be positive, got {v}")));
        }
        if self.iterations == 0 || self.epochs_per_phase == 0 || self.batch_size == 0 {
            return Err(Error::Contract("L, epochs_per_phase and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss traces and outcome of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Index `k` of the fitted path `π^k`; odd for reverse phases.
    pub path_index: usize,
    pub iteration: usize,
    pub direction: Direction,
    /// Per-epoch regression loss of the B network, then of the A network.
    pub b_loss: Vec<f64>,
    pub a_loss: Vec<f64>,
    pub stopped_early: bool,
    /// Sample-step pairs skipped by the denominator guard, out of `total`.
    pub skipped: usize,
    pub total: usize,
    pub fa: Vec<f64>,
    pub fb: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfDiagnostics {
    pub prefit_loss_a: f64,
    pub prefit_loss_b: f64,
    pub phases: Vec<PhaseReport>,
    pub wall_seconds: f64,
}

impl IpfDiagnostics {
    /// Fraction of all sample-step pairs rejected by the denominator guard.
    pub fn skip_fraction(&self) -> f64 {
        let (s, t) = self.phases.iter().fold((0, 0), |(s, t), p| (s + p.skipped, t + p.total));
        if t == 0 {
            0.0
        } else {
            s as f64 / t as f64
        }
    }

    /// Copy with every wall-clock field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut d = self.clone();
        d.wall_seconds = 0.0;
        d.phases.iter_mut().for_each(|p| p.wall_seconds = 0.0);
        d
    }
}

fn check_step(prev: &PathSchedule, curr: &PathSchedule, t: usize) -> Result<()> {
    if prev.steps() != curr.steps() {
        return Err(Error::Contract(format!(
            "paths differ in length: {} vs {} steps",
            prev.steps(),
            curr.steps()
        )));
    }
    if t == 0 || t + 1 > prev.steps() {
        return Err(Error::OutOfRange {
            t,
            max: prev.steps().saturating_sub(1),
        });
    }
    Ok(())
}

/// `(x_{t+1} − f_B^prev(t+1)·ε) / f_A^prev(t+1)`, the endpoint recovered on
/// `prev`, kept as the unscaled image and its scale.
fn image(x_next: Point2, eps: Point2, prev: &PathSchedule, t: usize, guard: f64) -> Option<(Point2, f64)> {
    let scale = prev.fa()[t + 1];
    (scale > guard).then(|| (x_next - prev.fb()[t + 1] * eps, scale))
}

fn transit(x_next: Point2, eps: Point2, prev: &PathSchedule, curr: &PathSchedule, t: usize, guard: f64) -> Result<Option<Point2>> {
    check_step(prev, curr, t)?;
    Ok(image(x_next, eps, prev, t, guard).map(|(img, scale)| (curr.fa()[t] / scale) * img + curr.fb()[t] * eps))
}

/// Move `x_{t+1}` of the forward path `prev` to step `t` of the reverse path
/// `curr` through the endpoint implied by the noise estimate `eps_theta`.
/// `None` when `f_A^prev(t+1)` is below `guard`.
pub fn transit_reverse(
    x_next: Point2,
    eps_theta: Point2,
    prev: &PathSchedule,
    curr: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<Point2>> {
    transit(x_next, eps_theta, prev, curr, t, guard)
}

/// Move `x_{t+1}` of the reverse path `odd` to step `t` of the forward path
/// `even` through the endpoint implied by the chain noise `eps_prime`.
pub fn transit_forward(
    x_next: Point2,
    eps_prime: Point2,
    odd: &PathSchedule,
    even: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<Point2>> {
    transit(x_next, eps_prime, odd, even, t, guard)
}

/// Numerator and denominator of a factor target; the scalar target is the
/// least-squares ratio `⟨num, den⟩ / ⟨den, den⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTerms {
    pub num: Point2,
    pub den: Point2,
}

impl TargetTerms {
    pub fn scalar(&self) -> f64 {
        self.num.dot(self.den) / self.den.norm_sq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Factor {
    A,
    B,
}

fn terms(
    factor: Factor,
    x_t: Point2,
    x_next: Point2,
    eps: Point2,
    prev: &PathSchedule,
    curr: &PathSchedule,
    t: usize,
    guard: f64,
) -> Option<TargetTerms> {
    let (img, scale) = image(x_next, eps, prev, t, guard)?;
    let tt = match factor {
        Factor::B => TargetTerms {
            num: x_t - (curr.fa()[t] / scale) * img,
            den: curr.fb()[t + 1] * eps,
        },
        // A(t) itself is left out of the product in the denominator.
        Factor::A => TargetTerms {
            num: x_t - curr.fb()[t] * eps,
            den: (curr.fa()[t - 1] / scale) * img,
        },
    };
    (tt.den.norm_sq().sqrt() >= guard).then_some(tt)
}

fn target(
    factor: Factor,
    x_t: Point2,
    x_next: Point2,
    eps: Point2,
    prev: &PathSchedule,
    curr: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<f64>> {
    check_step(prev, curr, t)?;
    Ok(terms(factor, x_t, x_next, eps, prev, curr, t, guard).map(|tt| tt.scalar()))
}

/// Target for `B(t)` of the reverse path from one forward sample pair
/// `(x_t, x_{t+1})`; `None` when a denominator falls below `guard`.
pub fn target_b_reverse(
    x_t: Point2,
    x_next: Point2,
    eps_theta: Point2,
    prev: &PathSchedule,
    curr: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<f64>> {
    target(Factor::B, x_t, x_next, eps_theta, prev, curr, t, guard)
}

/// Target for `A(t)` of the reverse path; uses `f_B^curr(t)`, so it sees the
/// latest `B` of `curr`.
pub fn target_a_reverse(
    x_t: Point2,
    x_next: Point2,
    eps_theta: Point2,
    prev: &PathSchedule,
    curr: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<f64>> {
    target(Factor::A, x_t, x_next, eps_theta, prev, curr, t, guard)
}

/// Target for `B(t)` of the forward path from a reverse rollout of `odd`.
pub fn target_b_forward(
    x_t: Point2,
    x_next: Point2,
    eps_prime: Point2,
    odd: &PathSchedule,
    even: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<f64>> {
    target(Factor::B, x_t, x_next, eps_prime, odd, even, t, guard)
}

pub fn target_a_forward(
    x_t: Point2,
    x_next: Point2,
    eps_prime: Point2,
    odd: &PathSchedule,
    even: &PathSchedule,
    t: usize,
    guard: f64,
) -> Result<Option<f64>> {
    target(Factor::A, x_t, x_next, eps_prime, odd, even, t, guard)
}

/// Chains of one phase: `states[c][t]` and the noise `noise[c][t]` paired
/// with state `t` when transiting from it.
#[derive(Debug, Clone)]
struct Pool {
    states: Vec<Vec<Point2>>,
    noise: Vec<Vec<Point2>>,
}

/// Forward chains on `path` from data endpoints, each paired with the
/// denoiser's noise estimate at every state.
fn forward_pool<D: Denoise + ?Sized>(
    net: &D,
    path: &PathSchedule,
    data: &[Point2],
    n: usize,
    seed: u64,
    rescale: bool,
) -> Result<Pool> {
    let mut rng = seeded_rng(seed);
    let t_max = path.steps();
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = data[rng.random_range(0..data.len())];
        let eps = Point2::standard_normal(&mut rng);
        states.push((0..=t_max).map(|t| path.fa()[t] * x0 + path.fb()[t] * eps).collect::<Vec<_>>());
    }
    let mut noise = vec![vec![Point2::ZERO; t_max + 1]; n];
    for s in 2..=t_max {
        let xs: Vec<Point2> = states.iter().map(|c| c[s]).collect();
        for (c, e) in noise_estimates(net, &xs, s, path, rescale)?.into_iter().enumerate() {
            noise[c][s] = e;
        }
    }
    Ok(Pool { states, noise })
}

/// Reverse rollouts on `path` from prior draws. The chain noise is the
/// denoiser's estimate at the terminal state, which equals the draw itself
/// when `f_A(T) = 0` and `f_B(T) = 1`.
fn reverse_pool<D: Denoise + ?Sized>(net: &D, path: &PathSchedule, n: usize, seed: u64, rescale: bool) -> Result<Pool> {
    let mut rng = seeded_rng(seed);
    let priors: Vec<Point2> = (0..n).map(|_| Point2::standard_normal(&mut rng)).collect();
    let t_max = path.steps();
    let chains = reverse_from(path, net, &priors, rescale)?;
    let noise = chains.iter().map(|tr| vec![tr.eps[t_max]; t_max + 1]).collect();
    let states = chains.into_iter().map(|tr| tr.states).collect();
    Ok(Pool { states, noise })
}

/// Targets for `t = 1..T-1`, pooled over chains as `Σ⟨num, den⟩ / Σ⟨den, den⟩`:
/// the factor value minimizing the summed squared transit error at `t`.
/// Also returns the number of skipped sample-step pairs.
fn pooled_targets(
    factor: Factor,
    pool: &Pool,
    prev: &PathSchedule,
    curr: &PathSchedule,
    guard: f64,
) -> (Vec<Option<f64>>, usize) {
    let t_max = prev.steps();
    let mut skipped = 0;
    let targets = (1..t_max)
        .map(|t| {
            let (mut nd, mut dd) = (0.0, 0.0);
            for (states, noise) in pool.states.iter().zip(&pool.noise) {
                match terms(factor, states[t], states[t + 1], noise[t + 1], prev, curr, t, guard) {
                    Some(tt) => {
                        nd += tt.num.dot(tt.den);
                        dd += tt.den.norm_sq();
                    }
                    None => skipped += 1,
                }
            }
            (dd > 0.0).then(|| nd / dd)
        })
        .collect();
    (targets, skipped)
}

/// Regression inputs from pooled targets, clamped to the factor range.
fn regression_set(targets: &[Option<f64>], path: &PathSchedule) -> (Vec<f64>, Vec<f64>) {
    targets
        .iter()
        .enumerate()
        .filter_map(|(i, y)| y.map(|y| (path.state_time(i + 1), y.clamp(FACTOR_FLOOR, 1.0))))
        .unzip()
}

fn plateaued(losses: &[f64], tol: f64) -> bool {
    let n = losses.len();
    if n <= PLATEAU_WINDOW {
        return false;
    }
    let split = n - PLATEAU_WINDOW;
    let before = losses[..split].iter().copied().fold(f64::INFINITY, f64::min);
    let recent = losses[split..].iter().copied().fold(f64::INFINITY, f64::min);
    before - recent < tol
}

struct Phase<'a> {
    pool: &'a Pool,
    prev: &'a PathSchedule,
    base: &'a PathSchedule,
    direction: Direction,
    path_index: usize,
    iteration: usize,
}

fn run_phase<M: FactorModel>(
    phase: Phase<'_>,
    model_a: &mut M,
    model_b: &mut M,
    cfg: &IpfConfig,
) -> Result<(PathSchedule, PhaseReport)> {
    let start = Instant::now();
    let label = format!("phase {} ({:?})", phase.path_index, phase.direction);
    let predict = |a: &M, b: &M| -> Result<PathSchedule> {
        Ok(kan_predict_schedule(a, b, phase.base)?.with_direction(phase.direction))
    };
    let per_epoch = 2 * phase.pool.states.len() * (phase.prev.steps() - 1);
    let mut fit_a = Fitter::new(model_a).with_eps(PHASE_ADAM_EPS);
    let mut fit_b = Fitter::new(model_b).with_eps(PHASE_ADAM_EPS);
    let mut report = PhaseReport {
        path_index: phase.path_index,
        iteration: phase.iteration,
        direction: phase.direction,
        b_loss: Vec::new(),
        a_loss: Vec::new(),
        stopped_early: false,
        skipped: 0,
        total: 0,
        fa: Vec::new(),
        fb: Vec::new(),
        wall_seconds: 0.0,
    };
    let mut totals = Vec::with_capacity(cfg.epochs_per_phase);
    for _ in 0..cfg.epochs_per_phase {
        // Targets for B come from a snapshot of the path; A then sees the updated B.
        let curr = predict(model_a, model_b)?;
        let (b_targets, b_skipped) = pooled_targets(Factor::B, phase.pool, phase.prev, &curr, cfg.denom_guard);
        let (xs, ys) = regression_set(&b_targets, phase.prev);
        let b_loss = if xs.is_empty() { None } else { Some(fit_b.step(model_b, &xs, &ys, None, cfg.lr_b)?) };
        let curr = predict(model_a, model_b)?;
        let (a_targets, a_skipped) = pooled_targets(Factor::A, phase.pool, phase.prev, &curr, cfg.denom_guard);
        let skipped = b_skipped + a_skipped;
        report.skipped += skipped;
        report.total += per_epoch;
        if skipped as f64 > MAX_SKIP_FRACTION * per_epoch as f64 {
            return Err(Error::IpfAbort {
                phase: label,
                skipped,
                total: per_epoch,
            });
        }
        let (xs, ys) = regression_set(&a_targets, phase.prev);
        let a_loss = if xs.is_empty() { None } else { Some(fit_a.step(model_a, &xs, &ys, None, cfg.lr_a)?) };
        let (b_loss, a_loss) = (b_loss.unwrap_or(0.0), a_loss.unwrap_or(0.0));
        report.b_loss.push(b_loss);
        report.a_loss.push(a_loss);
        totals.push(b_loss + a_loss);
        if plateaued(&totals, cfg.plateau_tol) {
            report.stopped_early = true;
            break;
        }
    }
    let path = predict(model_a, model_b)?;
    report.fa = path.fa().to_vec();
    report.fb = path.fb().to_vec();
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((path, report))
}

fn phase_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Optimize `init` against the frozen `net` with factor networks `model_a`
/// and `model_b`, which are first fitted to the interior factors of `init`
/// and then carried from phase to phase. Each outer iteration fits a
/// reverse path to forward chains of the last forward path, then a forward
/// path to reverse rollouts of that reverse path. `on_phase` sees every
/// fitted path as it is produced. Returns the last reverse path.
pub fn ipf_optimize_with<D, M, F>(
    net: &D,
    init: &PathSchedule,
    data: &[Point2],
    cfg: &IpfConfig,
    model_a: &mut M,
    model_b: &mut M,
    mut on_phase: F,
) -> Result<(PathSchedule, IpfDiagnostics)>
where
    D: Denoise + ?Sized,
    M: FactorModel,
    F: FnMut(&PathSchedule, &PhaseReport),
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("IPF needs data".into()));
    }
    if init.steps() < 2 {
        return Err(Error::Contract("IPF needs a path with at least two steps".into()));
    }
    let start = Instant::now();
    let (xs, a, b) = interior_factors(init);
    let prefit_loss_a = kan_fit(model_a, &xs, &a, cfg.prefit_epochs, cfg.prefit_lr)?;
    let prefit_loss_b = kan_fit(model_b, &xs, &b, cfg.prefit_epochs, cfg.prefit_lr)?;
    let mut diagnostics = IpfDiagnostics {
        prefit_loss_a,
        prefit_loss_b,
        phases: Vec::with_capacity(2 * cfg.iterations),
        wall_seconds: 0.0,
    };
    let mut forward = init.clone().with_direction(Direction::Forward);
    let mut reverse = init.clone().with_direction(Direction::Reverse);
    for n in 0..cfg.iterations {
        let k = 2 * n + 1;
        let pool = forward_pool(net, &forward, data, cfg.batch_size, phase_seed(cfg.seed, k), cfg.rescale)?;
        let phase = Phase {
            pool: &pool,
            prev: &forward,
            base: init,
            direction: Direction::Reverse,
            path_index: k,
            iteration: n,
        };
        let (path, report) = run_phase(phase, model_a, model_b, cfg)?;
        on_phase(&path, &report);
        diagnostics.phases.push(report);
        reverse = path;

        let k = 2 * n + 2;
        let pool = reverse_pool(net, &reverse, cfg.batch_size, phase_seed(cfg.seed, k), cfg.rescale)?;
        let phase = Phase {
            pool: &pool,
            prev: &reverse,
            base: init,
            direction: Direction::Forward,
            path_index: k,
            iteration: n,
        };
        let (path, report) = run_phase(phase, model_a, model_b, cfg)?;
        on_phase(&path, &report);
        diagnostics.phases.push(report);
        forward = path;
    }
    diagnostics.wall_seconds = start.elapsed().as_secs_f64();
    Ok((reverse, diagnostics))
}

/// [`ipf_optimize_with`] using fresh predictors of kind `cfg.predictor`
/// sized for the path, reporting each phase to `on_phase`.
pub fn ipf_optimize_reporting<D, F>(
    net: &D,
    init: &PathSchedule,
    data: &[Point2],
    cfg: &IpfConfig,
    on_phase: F,
) -> Result<(PathSchedule, IpfDiagnostics)>
where
    D: Denoise + ?Sized,
    F: FnMut(&PathSchedule, &PhaseReport),
{
    let mut a = KanNetwork::for_steps(init.steps(), cfg.seed)?;
    let mut b = KanNetwork::for_steps(init.steps(), cfg.seed.wrapping_add(1))?;
    match cfg.predictor {
        Predictor::Kan => ipf_optimize_with(net, init, data, cfg, &mut a, &mut b, on_phase),
        Predictor::Mlp => {
            let mut a = MlpNet::matched(a.param_count(), cfg.seed)?;
            let mut b = MlpNet::matched(b.param_count(), cfg.seed.wrapping_add(1))?;
            ipf_optimize_with(net, init, data, cfg, &mut a, &mut b, on_phase)
        }
    }
}

pub fn ipf_optimize<D: Denoise + ?Sized>(
    net: &D,
    init: &PathSchedule,
    data: &[Point2],
    cfg: &IpfConfig,
) -> Result<(PathSchedule, IpfDiagnostics)> {
    ipf_optimize_reporting(net, init, data, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_sample, seeded_rng};
    use crate::denoiser::{Denoiser, OracleDenoiser, PredictionMode};
    use crate::schedule::{init_linear, init_vp, perturb, SubsampleMap};

    fn vp(nfe: usize) -> PathSchedule {
        init_vp(1e-4, 0.02, SubsampleMap::uniform(1000, nfe).unwrap()).unwrap()
    }

    fn hand_paths() -> (PathSchedule, PathSchedule) {
        let map = SubsampleMap::uniform(1000, 3).unwrap();
        let prev = PathSchedule::from_weights(map.clone(), vec![1.0, 0.8, 0.5, 0.2], vec![0.1, 0.4, 0.7, 1.0]).unwrap();
        let curr = PathSchedule::from_weights(map, vec![1.0, 0.9, 0.6, 0.2], vec![0.1, 0.5, 0.8, 1.0]).unwrap();
        (prev, curr)
    }

    #[test]
    fn transit_retraces_a_forward_chain_on_the_same_path() {
        let path = vp(10);
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let x0 = Point2::standard_normal(&mut rng);
            let eps = Point2::standard_normal(&mut rng);
            for t in 1..10 {
                let x_next = path.fa()[t + 1] * x0 + path.fb()[t + 1] * eps;
                let want = path.fa()[t] * x0 + path.fb()[t] * eps;
                let got = transit_reverse(x_next, eps, &path, &path, t, 1e-6).unwrap().unwrap();
                assert!(got.max_abs_diff(want) < 1e-12);
                let got = transit_forward(x_next, eps, &path, &path, t, 1e-6).unwrap().unwrap();
                assert!(got.max_abs_diff(want) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_transit_is_a_rescaling() {
        let (prev, curr) = hand_paths();
        let x = Point2::new(0.7, -0.3);
        let got = transit_reverse(x, Point2::ZERO, &prev, &curr, 1, 1e-6).unwrap().unwrap();
        assert!(got.max_abs_diff((0.9 / 0.5) * x) < 1e-15);
    }

    #[test]
    fn transit_matches_two_stage_route_through_the_endpoint() {
        let base = vp(8);
        let mut rng = seeded_rng(2);
        for k in 0..20 {
            let prev = perturb(&base, 0.1, k).unwrap();
            let curr = perturb(&base, 0.1, 100 + k).unwrap();
            for t in 1..8 {
                let x_next = 2.0 * Point2::standard_normal(&mut rng);
                let eps = Point2::standard_normal(&mut rng);
                let x0 = (1.0 / prev.fa()[t + 1]) * (x_next - prev.fb()[t + 1] * eps);
                let want = curr.fa()[t] * x0 + curr.fb()[t] * eps;
                let got = transit_reverse(x_next, eps, &prev, &curr, t, 1e-6).unwrap().unwrap();
                assert!(got.max_abs_diff(want) < 1e-12 * (1.0 + want.norm_sq().sqrt()));
            }
        }
    }

    #[test]
    fn targets_are_fixed_points_on_identical_paths() {
        let path = perturb(&vp(10), 0.05, 3).unwrap();
        let mut rng = seeded_rng(4);
        for _ in 0..200 {
            let x0 = 1.5 * Point2::standard_normal(&mut rng);
            let eps = Point2::standard_normal(&mut rng);
            for t in 1..10 {
                let x_t = path.fa()[t] * x0 + path.fb()[t] * eps;
                let x_next = path.fa()[t + 1] * x0 + path.fb()[t + 1] * eps;
                let b = target_b_reverse(x_t, x_next, eps, &path, &path, t, 1e-6).unwrap().unwrap();
                let a = target_a_reverse(x_t, x_next, eps, &path, &path, t, 1e-6).unwrap().unwrap();
                assert!((b - path.factors_b()[t]).abs() < 1e-9);
                assert!((a - path.factors_a()[t]).abs() < 1e-9);
                let b = target_b_forward(x_t, x_next, eps, &path, &path, t, 1e-6).unwrap().unwrap();
                let a = target_a_forward(x_t, x_next, eps, &path, &path, t, 1e-6).unwrap().unwrap();
                assert!((b - path.factors_b()[t]).abs() < 1e-9);
                assert!((a - path.factors_a()[t]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn targets_on_a_hand_instance() {
        // prev f_A(2) = 0.5, f_B(2) = 0.7; curr f_A = (1, 0.9, ..), f_B(1) = 0.5, f_B(2) = 0.8.
        // Endpoint image 0.9 − 0.7·0.5 = 0.55.
        // B: (1 − (0.9/0.5)·0.55) / (0.8·0.5) = 0.01 / 0.4.
        // A: (1 − 0.5·0.5) / ((1/0.5)·0.55) = 0.75 / 1.1.
        let (prev, curr) = hand_paths();
        let (x_t, x_next, eps) = (Point2::new(1.0, 0.0), Point2::new(0.9, 0.0), Point2::new(0.5, 0.0));
        let b = target_b_reverse(x_t, x_next, eps, &prev, &curr, 1, 1e-6).unwrap().unwrap();
        let a = target_a_reverse(x_t, x_next, eps, &prev, &curr, 1, 1e-6).unwrap().unwrap();
        assert!((b - 0.025).abs() < 1e-12, "{b}");
        assert!((a - 0.75 / 1.1).abs() < 1e-12, "{a}");
        let tt = TargetTerms {
            num: Point2::new(1.0, 2.0),
            den: Point2::new(3.0, 4.0),
        };
        assert_eq!(tt.scalar(), 11.0 / 25.0);
    }

    #[test]
    fn guard_skips_small_denominators() {
        let (prev, curr) = hand_paths();
        let x = Point2::new(1.0, 1.0);
        assert_eq!(target_b_reverse(x, x, Point2::ZERO, &prev, &curr, 1, 1e-6).unwrap(), None);
        let lin = init_linear(SubsampleMap::uniform(1000, 4).unwrap()).unwrap();
        assert_eq!(transit_reverse(x, x, &lin, &lin, 3, 1e-6).unwrap(), None);
        assert_eq!(target_a_forward(x, x, x, &lin, &lin, 3, 1e-6).unwrap(), None);
        assert!(target_b_reverse(x, x, x, &prev, &curr, 3, 1e-6).is_err());
        assert!(target_b_reverse(x, x, x, &prev, &curr, 0, 1e-6).is_err());
    }

    #[test]
    fn pooled_target_minimizes_summed_transit_error() {
        let prev = perturb(&vp(6), 0.1, 1).unwrap();
        let curr = perturb(&vp(6), 0.1, 2).unwrap();
        let net = Denoiser::new(PredictionMode::NoisePrediction, 8, 0).unwrap();
        let data = gaussian_sample(50, 3).unwrap();
        let pool = forward_pool(&net, &prev, &data, 40, 5, true).unwrap();
        let (targets, skipped) = pooled_targets(Factor::B, &pool, &prev, &curr, 1e-6);
        assert_eq!(skipped, 0);
        let t = 3;
        // Transit to `t` with B(t) = b: f_B(t) becomes b·f_B(t+1), nothing else moves.
        let cost = |b: f64| -> f64 {
            pool.states
                .iter()
                .zip(&pool.noise)
                .map(|(s, e)| {
                    let img = s[t + 1] - prev.fb()[t + 1] * e[t + 1];
                    let x = (curr.fa()[t] / prev.fa()[t + 1]) * img + (b * curr.fb()[t + 1]) * e[t + 1];
                    (x - s[t]).norm_sq()
                })
                .sum()
        };
        let best = targets[t - 1].unwrap();
        let h = 1e-4 * best.abs().max(1.0);
        assert!(cost(best) <= cost(best + h) && cost(best) <= cost(best - h));
    }

    #[test]
    fn plateau_rule() {
        let flat = vec![1.0; 30];
        assert!(plateaued(&flat, 1e-6));
        let falling: Vec<f64> = (0..30).map(|e| 1.0 - 0.01 * e as f64).collect();
        assert!(!plateaued(&falling, 1e-6));
        assert!(!plateaued(&flat[..PLATEAU_WINDOW], 1e-6));
    }

    fn small_cfg() -> IpfConfig {
        IpfConfig {
            iterations: 1,
            epochs_per_phase: 15,
            batch_size: 64,
            prefit_epochs: 300,
            ..IpfConfig::default()
        }
    }

    #[test]
    fn oracle_denoiser_leaves_the_path_in_place() {
        let init = vp(5);
        let target = Point2::new(0.6, -0.4);
        let oracle = OracleDenoiser::new(PredictionMode::NoisePrediction, vp(5), target);
        let cfg = IpfConfig {
            prefit_epochs: 2000,
            ..small_cfg()
        };
        let (path, diag) = ipf_optimize(&oracle, &init, &[target], &cfg).unwrap();
        for t in 0..=5 {
            assert!((path.fa()[t] - init.fa()[t]).abs() < 1e-3, "t={t}");
            assert!((path.fb()[t] - init.fb()[t]).abs() < 1e-3, "t={t}");
        }
        assert_eq!(path.fa()[0], init.fa()[0]);
        assert_eq!(path.fb()[5], init.fb()[5]);
        assert_eq!(path.direction(), Direction::Reverse);
        assert_eq!(diag.phases.len(), 2);
        assert_eq!(diag.skip_fraction(), 0.0);
    }

    #[test]
    fn runs_are_reproducible() {
        let init = vp(5);
        let net = Denoiser::new(PredictionMode::NoisePrediction, 8, 1).unwrap();
        let data = gaussian_sample(100, 2).unwrap();
        let (p1, d1) = ipf_optimize(&net, &init, &data, &small_cfg()).unwrap();
        let (p2, d2) = ipf_optimize(&net, &init, &data, &small_cfg()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(d1.without_timing(), d2.without_timing());
        assert!(d1.phases.iter().all(|p| !p.b_loss.is_empty() && p.b_loss.len() == p.a_loss.len()));
    }

    #[test]
    fn callback_sees_every_phase_in_order() {
        let init = init_linear(SubsampleMap::uniform(1000, 5).unwrap()).unwrap();
        let net = Denoiser::new(PredictionMode::DirectionPrediction, 8, 1).unwrap();
        let data = gaussian_sample(100, 2).unwrap();
        let cfg = IpfConfig {
            iterations: 2,
            epochs_per_phase: 3,
            ..small_cfg()
        };
        let mut seen = Vec::new();
        let mut a = KanNetwork::for_steps(5, 0).unwrap();
        let mut b = KanNetwork::for_steps(5, 1).unwrap();
        let (last, _) = ipf_optimize_with(&net, &init, &data, &cfg, &mut a, &mut b, |p, r| {
            seen.push((r.path_index, p.direction()))
        })
        .unwrap();
        assert_eq!(
            seen,
            vec![
                (1, Direction::Reverse),
                (2, Direction::Forward),
                (3, Direction::Reverse),
                (4, Direction::Forward)
            ]
        );
        assert_eq!(last.direction(), Direction::Reverse);
    }

    #[test]
    fn huge_guard_aborts() {
        let init = vp(5);
        let net = Denoiser::new(PredictionMode::NoisePrediction, 8, 1).unwrap();
        let data = gaussian_sample(100, 2).unwrap();
        let cfg = IpfConfig {
            denom_guard: 1e3,
            ..small_cfg()
        };
        let err = ipf_optimize(&net, &init, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::IpfAbort { .. }), "{err}");
    }

    #[test]
    fn config_validation_and_json() {
        assert!(IpfConfig::default().validate().is_ok());
        let bad = IpfConfig {
            iterations: 0,
            ..IpfConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg: IpfConfig = serde_json::from_str(r#"{"L": 2, "lr_a": 0.01}"#).unwrap();
        assert_eq!(cfg.iterations, 2);
        assert_eq!(cfg.lr_a, 0.01);
        assert_eq!(cfg.epochs_per_phase, 200);
        assert!(serde_json::from_str::<IpfConfig>(r#"{"bogus": 1}"#).is_err());
        let cfg: IpfConfig = serde_json::from_str(r#"{"predictor": "mlp"}"#).unwrap();
        assert_eq!(cfg.predictor, Predictor::Mlp);
    }
}
