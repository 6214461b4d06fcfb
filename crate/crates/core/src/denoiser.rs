//! The frozen denoising network and endpoint recovery from its output.

use crate::data::{seeded_rng, Point2};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, matmul_into, matmul_nt, matmul_tn, sigmoid, AdamState, Matrix};
use crate::schedule::{normalize_sum_to_one, PathSchedule};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Threshold below which endpoint formulas refuse to divide.
pub const ENDPOINT_GUARD: f64 = 1e-8;

/// Training length and peak learning rate that fit the checkerboard in about
/// a minute on one core.
pub const DEFAULT_EPOCHS: usize = 250;
pub const DEFAULT_LR: f64 = 1e-2;

const EMBED_FREQS: usize = 8;
const INPUT_DIM: usize = 2 + 2 * EMBED_FREQS;
const CHECKPOINT_FORMAT: &str = "ldsb-denoiser";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionMode {
    /// Predicts the noise `ε` (DDIM family).
    #[serde(rename = "noise")]
    NoisePrediction,
    /// Predicts the direction `x_0 − ε` (flow-matching family).
    #[serde(rename = "direction")]
    DirectionPrediction,
}

/// Anything that maps `(x_t, time)` to a prediction. `time` is the fine-grid
/// time in `[0, 1]` of the state, as given by [`crate::schedule::SubsampleMap::time`].
pub trait Denoise {
    fn mode(&self) -> PredictionMode;
    fn predict(&self, x: Point2, time: f64) -> Point2;

    fn predict_batch(&self, xs: &[Point2], time: f64) -> Vec<Point2> {
        xs.iter().map(|&x| self.predict(x, time)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// `in × out`.
    w: Matrix,
    b: Vec<f64>,
}

impl Dense {
    fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Self {
            w: Matrix::from_vec(fan_in, fan_out, data).expect("finite init"),
            b: vec![0.0; fan_out],
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.w.cols());
        matmul_into(x, &self.w, &mut z);
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        z
    }
}

fn embed(time: f64) -> [f64; 2 * EMBED_FREQS] {
    let mut e = [0.0; 2 * EMBED_FREQS];
    for k in 0..EMBED_FREQS {
        let w = std::f64::consts::PI * (1u32 << k) as f64 * time;
        e[2 * k] = w.sin();
        e[2 * k + 1] = w.cos();
    }
    e
}

/// Rows `[x, y, sin(π2^k t), cos(π2^k t)]` for `k < 8`, one time per point.
fn features(xs: &[Point2], times: impl Iterator<Item = f64>) -> Matrix {
    let mut m = Matrix::zeros(xs.len(), INPUT_DIM);
    for (r, (p, t)) in xs.iter().zip(times).enumerate() {
        let row = m.row_mut(r);
        row[0] = p.x;
        row[1] = p.y;
        row[2..].copy_from_slice(&embed(t));
    }
    m
}

/// `(σ(z), z·σ(z))` elementwise; `z` is consumed.
fn silu(mut z: Matrix) -> (Matrix, Matrix) {
    let mut s = z.clone();
    s.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    z.data_mut().iter_mut().zip(s.data()).for_each(|(v, s)| *v *= s);
    (s, z)
}

/// Upstream gradient times `silu'(z) = σ + h·(1 − σ)` with `h = z·σ(z)`.
fn silu_backward(mut upstream: Matrix, s: &Matrix, h: &Matrix) -> Matrix {
    for ((g, &s), &h) in upstream.data_mut().iter_mut().zip(s.data()).zip(h.data()) {
        *g *= s + h * (1.0 - s);
    }
    upstream
}

/// `(2 + 16) → hidden → hidden → 2` perceptron with SiLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    mode: PredictionMode,
    layers: [Dense; 3],
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    mode: PredictionMode,
    layers: Vec<Dense>,
}

/// Cached activations of one batched forward pass.
struct Activations {
    x: Matrix,
    /// `σ(z)` and `z·σ(z)` of each hidden layer.
    s1: Matrix,
    h1: Matrix,
    s2: Matrix,
    h2: Matrix,
    out: Matrix,
}

impl Denoiser {
    pub fn new(mode: PredictionMode, hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Contract("hidden width must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        Ok(Self {
            mode,
            layers: [
                Dense::new(INPUT_DIM, hidden, &mut rng),
                Dense::new(hidden, hidden, &mut rng),
                Dense::new(hidden, 2, &mut rng),
            ],
        })
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.data().len() + l.b.len()).sum()
    }

    fn forward(&self, x: Matrix) -> Activations {
        let (s1, h1) = silu(self.layers[0].forward(&x));
        let (s2, h2) = silu(self.layers[1].forward(&h1));
        let out = self.layers[2].forward(&h2);
        Activations { x, s1, h1, s2, h2, out }
    }

    /// Mean squared error per coordinate and its gradient, laid out as
    /// `[w1, b1, w2, b2, w3, b3]`.
    fn loss_and_grad(&self, xs: &[Point2], times: &[f64], targets: &[Point2]) -> (f64, Vec<Vec<f64>>) {
        let act = self.forward(features(xs, times.iter().copied()));
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut d_out = Matrix::zeros(xs.len(), 2);
        for (r, tgt) in targets.iter().enumerate() {
            let o = act.out.row(r);
            let diff = [o[0] - tgt.x, o[1] - tgt.y];
            loss += diff[0] * diff[0] + diff[1] * diff[1];
            d_out.row_mut(r).copy_from_slice(&[diff[0] / n, diff[1] / n]);
        }
        loss /= 2.0 * n;

        let g_w3 = matmul_tn(&act.h2, &d_out);
        let g_b3 = col_sums(&d_out);
        let d_z2 = silu_backward(matmul_nt(&d_out, &self.layers[2].w), &act.s2, &act.h2);
        let g_w2 = matmul_tn(&act.h1, &d_z2);
        let g_b2 = col_sums(&d_z2);
        let d_z1 = silu_backward(matmul_nt(&d_z2, &self.layers[1].w), &act.s1, &act.h1);
        let g_w1 = matmul_tn(&act.x, &d_z1);
        let g_b1 = col_sums(&d_z1);
        let grads = vec![
            g_w1.data().to_vec(),
            g_b1,
            g_w2.data().to_vec(),
            g_b2,
            g_w3.data().to_vec(),
            g_b3,
        ];
        (loss, grads)
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let [l1, l2, l3] = &mut self.layers;
        vec![
            ("denoiser.w1", l1.w.data_mut()),
            ("denoiser.b1", &mut l1.b[..]),
            ("denoiser.w2", l2.w.data_mut()),
            ("denoiser.b2", &mut l2.b[..]),
            ("denoiser.w3", l3.w.data_mut()),
            ("denoiser.b3", &mut l3.b[..]),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            mode: self.mode,
            layers: self.layers.to_vec(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let layers: [Dense; 3] = ck
            .layers
            .try_into()
            .map_err(|_| Error::Parse("checkpoint must hold three layers".into()))?;
        let dims_ok = layers[0].w.rows() == INPUT_DIM
            && layers[1].w.rows() == layers[0].w.cols()
            && layers[2].w.rows() == layers[1].w.cols()
            && layers[2].w.cols() == 2
            && layers.iter().all(|l| l.b.len() == l.w.cols() && l.w.data().len() == l.w.rows() * l.w.cols());
        if !dims_ok {
            return Err(Error::Parse("checkpoint layer shapes are inconsistent".into()));
        }
        if !layers.iter().all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite())) {
            return Err(Error::Parse("checkpoint holds non-finite weights".into()));
        }
        Ok(Self { mode: ck.mode, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Denoise for Denoiser {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn predict(&self, x: Point2, time: f64) -> Point2 {
        self.predict_batch(&[x], time)[0]
    }

    fn predict_batch(&self, xs: &[Point2], time: f64) -> Vec<Point2> {
        let out = self.forward(features(xs, std::iter::repeat(time))).out;
        (0..xs.len()).map(|r| Point2::new(out.get(r, 0), out.get(r, 1))).collect()
    }
}

fn col_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        s.iter_mut().zip(m.row(r)).for_each(|(a, b)| *a += b);
    }
    s
}

/// Knobs of [`train_denoiser`] beyond the ones it takes directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub hidden: usize,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            hidden: 128,
            batch_size: 256,
        }
    }
}

/// Result of a training run: the frozen network and its per-epoch loss.
#[derive(Debug, Clone)]
pub struct Trained {
    pub denoiser: Denoiser,
    pub epoch_losses: Vec<f64>,
}

/// Regression target for `(x_0, ε)` under `mode`.
pub fn training_target(mode: PredictionMode, x0: Point2, eps: Point2) -> Point2 {
    match mode {
        PredictionMode::NoisePrediction => eps,
        PredictionMode::DirectionPrediction => x0 - eps,
    }
}

/// Train on states `x_t = f_A(t)·x_0 + f_B(t)·ε` of `path` with `t` uniform
/// over `1..T-1` and `ε` fresh per example. One epoch is one pass over `data`
/// in minibatches; the learning rate decays by a cosine to `lr / 100`.
pub fn train_denoiser(
    data: &[Point2],
    path: &PathSchedule,
    mode: PredictionMode,
    epochs: usize,
    lr: f64,
    seed: u64,
    opts: TrainOptions,
) -> Result<Trained> {
    if data.is_empty() || epochs == 0 || opts.batch_size == 0 || !(lr > 0.0) {
        return Err(Error::Contract("need data, epochs, batch size and lr > 0".into()));
    }
    let t_max = path.steps();
    if t_max < 2 {
        return Err(Error::Contract("training path needs at least two steps".into()));
    }
    let mut net = Denoiser::new(mode, opts.hidden, seed)?;
    let mut states: Vec<AdamState> = net.params_mut().iter().map(|(_, p)| AdamState::new(p.len())).collect();
    let mut rng = seeded_rng(seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total_steps = epochs * data.len().div_ceil(opts.batch_size);
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        let mut count = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut times = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = rng.random_range(1..t_max);
                let eps = Point2::standard_normal(&mut rng);
                let (fa, fb) = path.weights_at(t)?;
                xs.push(fa * data[i] + fb * eps);
                times.push(path.map().time(t));
                targets.push(training_target(mode, data[i], eps));
            }
            let (loss, grads) = net.loss_and_grad(&xs, &times, &targets);
            if !loss.is_finite() || loss > 1e6 {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}")));
            }
            let progress = step as f64 / total_steps as f64;
            let rate = lr * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            for (((name, params), g), state) in net.params_mut().into_iter().zip(&grads).zip(&mut states) {
                adam_step(name, params, g, state, rate).map_err(|e| Error::Diverged(e.to_string()))?;
            }
            sum += loss * chunk.len() as f64;
            count += chunk.len() as f64;
            step += 1;
        }
        epoch_losses.push(sum / count);
    }
    Ok(Trained {
        denoiser: net,
        epoch_losses,
    })
}

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
}

/// Mean squared error per coordinate on fresh states of `path` at `t = 1..T-1`.
pub fn held_out_mse<D: Denoise>(net: &D, data: &[Point2], path: &PathSchedule, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let t_max = path.steps();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..t_max {
        let (fa, fb) = path.weights_at(t)?;
        let eps: Vec<Point2> = data.iter().map(|_| Point2::standard_normal(&mut rng)).collect();
        let xs: Vec<Point2> = data.iter().zip(&eps).map(|(&x0, &e)| fa * x0 + fb * e).collect();
        let pred = net.predict_batch(&xs, path.map().time(t));
        for ((p, &x0), &e) in pred.iter().zip(data).zip(&eps) {
            sum += (*p - training_target(net.mode(), x0, e)).norm_sq();
            count += 2;
        }
    }
    Ok(sum / count as f64)
}

/// A denoiser given by a closure, for oracles and tests.
pub struct FnDenoiser<F> {
    mode: PredictionMode,
    f: F,
}

impl<F: Fn(Point2, f64) -> Point2> FnDenoiser<F> {
    pub fn new(mode: PredictionMode, f: F) -> Self {
        Self { mode, f }
    }
}

impl<F: Fn(Point2, f64) -> Point2> Denoise for FnDenoiser<F> {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn predict(&self, x: Point2, time: f64) -> Point2 {
        (self.f)(x, time)
    }
}

/// Exact denoiser for data concentrated at one point `x*` diffused along
/// `path`: it inverts `x = f_A·x* + f_B·ε` at the state whose time matches.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    mode: PredictionMode,
    path: PathSchedule,
    target: Point2,
}

impl OracleDenoiser {
    pub fn new(mode: PredictionMode, path: PathSchedule, target: Point2) -> Self {
        Self { mode, path, target }
    }

    fn state_for(&self, time: f64) -> usize {
        let map = self.path.map();
        (0..=self.path.steps())
            .min_by(|&a, &b| (map.time(a) - time).abs().total_cmp(&(map.time(b) - time).abs()))
            .unwrap()
    }
}

impl Denoise for OracleDenoiser {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn predict(&self, x: Point2, time: f64) -> Point2 {
        let t = self.state_for(time);
        let (fa, fb) = (self.path.fa()[t], self.path.fb()[t]);
        let eps = (1.0 / fb) * (x - fa * self.target);
        training_target(self.mode, self.target, eps)
    }
}

/// Estimated clean sample and noise behind one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointEstimate {
    pub x0_hat: Point2,
    pub eps_hat: Point2,
}

/// `ε̂ = D(x_t, t)`, `x̂_0 = (x_t − f_B(t)·ε̂) / f_A(t)`.
pub fn endpoints_ddim<D: Denoise + ?Sized>(x_t: Point2, t: usize, path: &PathSchedule, net: &D) -> Result<EndpointEstimate> {
    if net.mode() != PredictionMode::NoisePrediction {
        return Err(Error::Contract("DDIM endpoints need a noise-prediction denoiser".into()));
    }
    let eps_hat = net.predict(x_t, path.map().time(t));
    ddim_from_prediction(x_t, eps_hat, t, path)
}

pub(crate) fn ddim_from_prediction(x_t: Point2, eps_hat: Point2, t: usize, path: &PathSchedule) -> Result<EndpointEstimate> {
    let (fa, fb) = path.weights_at(t)?;
    if fa <= ENDPOINT_GUARD {
        return Err(Error::DivisionGuard { what: "f_A", t });
    }
    Ok(EndpointEstimate {
        x0_hat: (1.0 / fa) * (x_t - fb * eps_hat),
        eps_hat,
    })
}

/// `ε̂ = (x_t − f_A·D)/(f_A + f_B)`, `x̂_0 = (x_t + f_B·D)/(f_A + f_B)`, with
/// the weights first rescaled to sum to one when `rescale` is set.
pub fn endpoints_fm<D: Denoise + ?Sized>(
    x_t: Point2,
    t: usize,
    path: &PathSchedule,
    net: &D,
    rescale: bool,
) -> Result<EndpointEstimate> {
    if net.mode() != PredictionMode::DirectionPrediction {
        return Err(Error::Contract("FM endpoints need a direction-prediction denoiser".into()));
    }
    let direction = net.predict(x_t, path.map().time(t));
    let weights = if rescale { normalize_sum_to_one(path)? } else { path.clone() };
    fm_from_prediction(x_t, direction, t, &weights)
}

pub(crate) fn fm_from_prediction(x_t: Point2, direction: Point2, t: usize, weights: &PathSchedule) -> Result<EndpointEstimate> {
    let (fa, fb) = weights.weights_at(t)?;
    let sum = fa + fb;
    if sum <= ENDPOINT_GUARD {
        return Err(Error::DivisionGuard { what: "f_A + f_B", t });
    }
    Ok(EndpointEstimate {
        x0_hat: (1.0 / sum) * (x_t + fb * direction),
        eps_hat: (1.0 / sum) * (x_t - fa * direction),
    })
}

/// Noise estimates `ε̂` for a batch of states at step `t` of `path`. Direction
/// predictions are read against the path rescaled to unit weight sum when
/// `rescale` is set, as in sampling.
pub fn noise_estimates<D: Denoise + ?Sized>(
    net: &D,
    xs: &[Point2],
    t: usize,
    path: &PathSchedule,
    rescale: bool,
) -> Result<Vec<Point2>> {
    let preds = net.predict_batch(xs, path.map().time(t));
    match net.mode() {
        PredictionMode::NoisePrediction => Ok(preds),
        PredictionMode::DirectionPrediction => {
            let weights = if rescale { normalize_sum_to_one(path)? } else { path.clone() };
            xs.iter()
                .zip(preds)
                .map(|(&x, d)| fm_from_prediction(x, d, t, &weights).map(|e| e.eps_hat))
                .collect()
        }
    }
}
