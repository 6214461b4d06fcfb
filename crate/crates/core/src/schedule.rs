//! Diffusion path schedules `x_t = f_A(t)·x_0 + f_B(t)·ε` stored as per-step
//! factors: `f_A(t) = Π_{i=0..t} A(i)` and `f_B(t) = Π_{i=T..t} B(i)`.

use crate::data::seeded_rng;
use crate::error::{Error, Result};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Slack allowed when checking monotonicity of weights (numerical ties).
pub const MONOTONE_TIE_TOL: f64 = 1e-9;

/// Smallest interior factor produced by clamping operations.
pub const FACTOR_FLOOR: f64 = 1e-6;

/// Maps path states onto a fine pretraining grid of `base_steps` steps.
///
/// State `t < nfe` sits at `selected[t]`; the terminal state `T = nfe` sits at
/// `base_steps`, the prior end of the fine grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleMap {
    base_steps: usize,
    selected: Vec<usize>,
}

impl SubsampleMap {
    pub fn new(base_steps: usize, selected: Vec<usize>) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::InvalidSchedule("subsample map is empty".into()));
        }
        if selected[0] != 0 {
            return Err(Error::InvalidSchedule("subsample map must start at step 0".into()));
        }
        if selected.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule("subsample map must be strictly increasing".into()));
        }
        if *selected.last().unwrap() >= base_steps {
            return Err(Error::InvalidSchedule(format!(
                "selected steps must lie below base_steps = {base_steps}"
            )));
        }
        Ok(Self { base_steps, selected })
    }

    /// `nfe` evenly spaced steps `0, base/nfe, 2·base/nfe, …`.
    pub fn uniform(base_steps: usize, nfe: usize) -> Result<Self> {
        if nfe == 0 || nfe > base_steps {
            return Err(Error::InvalidSchedule(format!(
                "cannot place {nfe} steps on a grid of {base_steps}"
            )));
        }
        Self::new(base_steps, (0..nfe).map(|k| k * base_steps / nfe).collect())
    }

    /// Every fine step is a path state.
    pub fn identity(base_steps: usize) -> Result<Self> {
        Self::uniform(base_steps, base_steps)
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Number of reverse steps (denoiser calls) along the path.
    pub fn nfe(&self) -> usize {
        self.selected.len()
    }

    /// Fine-grid step of path state `t` (0..=nfe).
    pub fn base_step(&self, t: usize) -> usize {
        if t < self.selected.len() {
            self.selected[t]
        } else {
            self.base_steps
        }
    }

    /// Normalized time of path state `t` on the fine grid, in `[0, 1]`.
    pub fn time(&self, t: usize) -> f64 {
        self.base_step(t) as f64 / self.base_steps as f64
    }
}

/// Which half of an IPF iteration a path belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Noising path, the even iterates.
    Forward,
    /// Sampling path, the odd iterates.
    Reverse,
}

/// A path in the factor subspace, with factors and cumulative weights kept in sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSchedule {
    map: SubsampleMap,
    a: Vec<f64>,
    b: Vec<f64>,
    fa: Vec<f64>,
    fb: Vec<f64>,
    direction: Direction,
}

impl PathSchedule {
    /// Build from cumulative weights; factors are derived by ratios.
    pub fn from_weights(map: SubsampleMap, fa: Vec<f64>, fb: Vec<f64>) -> Result<Self> {
        check_len(&map, fa.len())?;
        let (a, b) = reparam_from_weights(&fa, &fb)?;
        let path = Self {
            map,
            a,
            b,
            fa,
            fb,
            direction: Direction::Forward,
        };
        path.check_factors()?;
        Ok(path)
    }

    /// Build from per-step factors; weights are their running products.
    pub fn from_factors(map: SubsampleMap, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_len(&map, a.len())?;
        check_len(&map, b.len())?;
        let (fa, fb) = weights_from_factors(&a, &b);
        let path = Self {
            map,
            a,
            b,
            fa,
            fb,
            direction: Direction::Forward,
        };
        path.check_factors()?;
        path.check_weights()?;
        Ok(path)
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn map(&self) -> &SubsampleMap {
        &self.map
    }

    /// Total step count `T`; states are `0..=T`.
    pub fn steps(&self) -> usize {
        self.fa.len() - 1
    }

    pub fn fa(&self) -> &[f64] {
        &self.fa
    }

    pub fn fb(&self) -> &[f64] {
        &self.fb
    }

    pub fn factors_a(&self) -> &[f64] {
        &self.a
    }

    pub fn factors_b(&self) -> &[f64] {
        &self.b
    }

    /// `(f_A(t), f_B(t))`.
    pub fn weights_at(&self, t: usize) -> Result<(f64, f64)> {
        if t > self.steps() {
            return Err(Error::OutOfRange { t, max: self.steps() });
        }
        Ok((self.fa[t], self.fb[t]))
    }

    /// Path state time normalized by the step count, the input of the factor nets.
    pub fn state_time(&self, t: usize) -> f64 {
        t as f64 / self.steps() as f64
    }

    fn check_factors(&self) -> Result<()> {
        let t_max = self.steps();
        for (name, f) in [("A", &self.a), ("B", &self.b)] {
            for (i, &v) in f.iter().enumerate() {
                let anchor = (name == "A" && i == 0) || (name == "B" && i == t_max);
                let edge = (name == "A" && i == t_max) || (name == "B" && i == 0);
                let ok = if anchor {
                    v > 0.0 && v.is_finite()
                } else if edge {
                    (0.0..=1.0 + MONOTONE_TIE_TOL).contains(&v)
                } else {
                    v > 0.0 && v <= 1.0 + MONOTONE_TIE_TOL
                };
                if !ok {
                    return Err(Error::InvalidSchedule(format!("factor {name}({i}) = {v} out of range")));
                }
            }
        }
        Ok(())
    }

    fn check_weights(&self) -> Result<()> {
        check_monotone(&self.fa, &self.fb)
    }
}

fn check_len(map: &SubsampleMap, len: usize) -> Result<()> {
    if len != map.nfe() + 1 {
        return Err(Error::InvalidSchedule(format!(
            "expected {} states for {} steps, got {len}",
            map.nfe() + 1,
            map.nfe()
        )));
    }
    Ok(())
}

fn check_monotone(fa: &[f64], fb: &[f64]) -> Result<()> {
    for t in 0..fa.len().saturating_sub(1) {
        if fa[t + 1] > fa[t] + MONOTONE_TIE_TOL {
            return Err(Error::Monotonicity { weight: "f_A", t: t + 1 });
        }
        if fb[t] > fb[t + 1] + MONOTONE_TIE_TOL {
            return Err(Error::Monotonicity { weight: "f_B", t: t + 1 });
        }
    }
    Ok(())
}

/// Running products `f_A(t) = Π_{i≤t} A(i)` and `f_B(t) = Π_{i≥t} B(i)`.
pub fn weights_from_factors(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut fa = Vec::with_capacity(a.len());
    let mut acc = 1.0;
    for &v in a {
        acc *= v;
        fa.push(acc);
    }
    let mut fb = vec![0.0; b.len()];
    let mut acc = 1.0;
    for t in (0..b.len()).rev() {
        acc *= b[t];
        fb[t] = acc;
    }
    (fa, fb)
}

/// Inverse of the running products: `A(t) = f_A(t)/f_A(t-1)`, `B(t) = f_B(t)/f_B(t+1)`.
///
/// Interior weights must be positive; only `f_A(T)` and `f_B(0)` may be zero.
pub fn reparam_from_weights(fa: &[f64], fb: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if fa.len() != fb.len() || fa.len() < 2 {
        return Err(Error::InvalidSchedule(format!(
            "weight lists must have equal length >= 2, got {} and {}",
            fa.len(),
            fb.len()
        )));
    }
    let t_max = fa.len() - 1;
    for t in 0..=t_max {
        if !fa[t].is_finite() || !fb[t].is_finite() {
            return Err(Error::InvalidSchedule(format!("non-finite weight at t={t}")));
        }
        let fa_ok = if t == t_max { fa[t] >= 0.0 } else { fa[t] > 0.0 };
        let fb_ok = if t == 0 { fb[t] >= 0.0 } else { fb[t] > 0.0 };
        if !fa_ok || !fb_ok {
            return Err(Error::InvalidSchedule(format!(
                "zero or negative weight at t={t}: f_A={}, f_B={}",
                fa[t], fb[t]
            )));
        }
    }
    check_monotone(fa, fb)?;
    let mut a = Vec::with_capacity(fa.len());
    a.push(fa[0]);
    for t in 1..=t_max {
        a.push(fa[t] / fa[t - 1]);
    }
    let mut b = vec![0.0; fb.len()];
    b[t_max] = fb[t_max];
    for t in 0..t_max {
        b[t] = fb[t] / fb[t + 1];
    }
    Ok((a, b))
}

/// `ᾱ(k) = Π_{j≤k} (1 - β_j)` with β linear from `beta_start` at step 0 to
/// `beta_end` at step `base - 1`; the terminal step `base` extends the line.
fn vp_alpha_bar(beta_start: f64, beta_end: f64, base: usize) -> Vec<f64> {
    let slope = if base > 1 {
        (beta_end - beta_start) / (base - 1) as f64
    } else {
        0.0
    };
    let mut acc = 1.0;
    (0..=base)
        .map(|j| {
            acc *= 1.0 - (beta_start + slope * j as f64);
            acc
        })
        .collect()
}

/// Variance-preserving path: `f_A = √ᾱ`, `f_B = √(1-ᾱ)` with linear β.
pub fn init_vp(beta_start: f64, beta_end: f64, map: SubsampleMap) -> Result<PathSchedule> {
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let alpha_bar = vp_alpha_bar(beta_start, beta_end, map.base_steps());
    let (fa, fb) = (0..=map.nfe())
        .map(|t| {
            let ab = alpha_bar[map.base_step(t)];
            (ab.sqrt(), (1.0 - ab).sqrt())
        })
        .unzip();
    PathSchedule::from_weights(map, fa, fb)
}

/// Linear (rectified-flow) path: `f_A = 1 - s`, `f_B = s` with `s = step / base`.
pub fn init_linear(map: SubsampleMap) -> Result<PathSchedule> {
    let (fa, fb) = (0..=map.nfe())
        .map(|t| {
            let s = map.time(t);
            (1.0 - s, s)
        })
        .unzip();
    PathSchedule::from_weights(map, fa, fb)
}

/// Variance-exploding path: `f_A = 1`, `f_B` geometric from `sigma_min` to `sigma_max`.
pub fn init_ve(sigma_min: f64, sigma_max: f64, map: SubsampleMap) -> Result<PathSchedule> {
    if !(0.0 < sigma_min && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
        )));
    }
    let ratio = sigma_max / sigma_min;
    let (fa, fb) = (0..=map.nfe())
        .map(|t| (1.0, sigma_min * ratio.powf(map.time(t))))
        .unzip();
    PathSchedule::from_weights(map, fa, fb)
}

/// Multiply each interior factor by `exp(ε)`, `ε ~ N(0, σ²)`; anchors stay fixed.
pub fn perturb(path: &PathSchedule, sigma: f64, seed: u64) -> Result<PathSchedule> {
    if !(sigma >= 0.0) {
        return Err(Error::Contract(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(path.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Contract(e.to_string()))?;
    let mut rng = seeded_rng(seed);
    let t_max = path.steps();
    let mut last_err = None;
    for _ in 0..100 {
        let mut a = path.a.clone();
        let mut b = path.b.clone();
        for t in 1..t_max {
            a[t] = (a[t] * normal.sample(&mut rng).exp()).clamp(FACTOR_FLOOR, 1.0);
            b[t] = (b[t] * normal.sample(&mut rng).exp()).clamp(FACTOR_FLOOR, 1.0);
        }
        match PathSchedule::from_factors(path.map.clone(), a, b) {
            Ok(p) => return Ok(p.with_direction(path.direction)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Rescale weights so that `f_A(t) + f_B(t) = 1` at every state.
pub fn normalize_sum_to_one(path: &PathSchedule) -> Result<PathSchedule> {
    let mut fa = Vec::with_capacity(path.fa.len());
    let mut fb = Vec::with_capacity(path.fb.len());
    for (t, (&a, &b)) in path.fa.iter().zip(&path.fb).enumerate() {
        let s = a + b;
        if !(s > 0.0) {
            return Err(Error::DivisionGuard { what: "f_A + f_B", t });
        }
        fa.push(a / s);
        fb.push(b / s);
    }
    Ok(PathSchedule::from_weights(path.map.clone(), fa, fb)?.with_direction(path.direction))
}

impl PathSchedule {
    /// CSV with header `time_step,f_A,f_B`, one row per state, 5 decimals.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_step,f_A,f_B")?;
        for t in 0..=self.steps() {
            writeln!(w, "{},{:.5},{:.5}", self.map.base_step(t), self.fa[t], self.fb[t])?;
        }
        Ok(())
    }

    /// Parse a path CSV; the last row is the terminal state and fixes the grid size.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "time_step,f_A,f_B" {
            return Err(Error::Parse("expected header `time_step,f_A,f_B`".into()));
        }
        let (mut steps, mut fa, mut fb) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("row {}: expected 3 columns", i + 2)));
            }
            let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", i + 2));
            steps.push(cols[0].parse::<usize>().map_err(|_| bad("time_step"))?);
            fa.push(cols[1].parse::<f64>().map_err(|_| bad("f_A"))?);
            fb.push(cols[2].parse::<f64>().map_err(|_| bad("f_B"))?);
        }
        if steps.len() < 2 {
            return Err(Error::Parse("path needs at least two rows".into()));
        }
        let base = steps.pop().unwrap();
        if steps.last().is_some_and(|&s| s >= base) {
            return Err(Error::Parse("time_step must be strictly increasing".into()));
        }
        let map = SubsampleMap::new(base, steps)?;
        Self::from_weights(map, fa, fb)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn vp(nfe: usize) -> PathSchedule {
        init_vp(1e-4, 0.02, SubsampleMap::uniform(1000, nfe).unwrap()).unwrap()
    }

    #[test]
    fn vp_matches_ddim_table_rows() {
        let p = vp(5);
        let want = [(0.99995, 0.01000), (0.81015, 0.58622), (0.03883, 0.99925)];
        for (t, (a, b)) in [0usize, 1, 4].into_iter().zip(want) {
            let (fa, fb) = p.weights_at(t).unwrap();
            assert!((fa - a).abs() < 5e-5 && (fb - b).abs() < 5e-5, "t={t}: {fa} {fb}");
        }
    }

    #[test]
    fn linear_rows() {
        let p = init_linear(SubsampleMap::uniform(1000, 5).unwrap()).unwrap();
        assert_eq!(p.weights_at(0).unwrap(), (1.0, 0.0));
        let (fa, fb) = p.weights_at(1).unwrap();
        assert!((fa - 0.8).abs() < 1e-12 && (fb - 0.2).abs() < 1e-12);
        let p10 = init_linear(SubsampleMap::uniform(1000, 10).unwrap()).unwrap();
        assert_eq!(p10.weights_at(5).unwrap(), (0.5, 0.5));
        assert_eq!(p10.weights_at(10).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn ve_is_geometric() {
        let p = init_ve(0.01, 50.0, SubsampleMap::uniform(1000, 10).unwrap()).unwrap();
        assert!((p.fb()[0] - 0.01).abs() < 1e-15);
        assert!((p.fb()[10] - 50.0).abs() < 1e-12);
        assert!((p.fb()[5] - (0.01f64 * 50.0).sqrt()).abs() < 1e-12);
        assert!(p.fa().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unit_factors_give_unit_weights() {
        let map = SubsampleMap::uniform(10, 5).unwrap();
        let p = PathSchedule::from_factors(map, vec![1.0; 6], vec![1.0; 6]).unwrap();
        for t in 0..=5 {
            assert_eq!(p.weights_at(t).unwrap(), (1.0, 1.0));
        }
        assert!(matches!(p.weights_at(6), Err(Error::OutOfRange { t: 6, max: 5 })));
    }

    #[test]
    fn weights_match_naive_products() {
        let mut rng = seeded_rng(5);
        let n = 12;
        let a: Vec<f64> = (0..=n).map(|_| rng.random_range(0.5..1.0)).collect();
        let b: Vec<f64> = (0..=n).map(|_| rng.random_range(0.5..1.0)).collect();
        let p = PathSchedule::from_factors(SubsampleMap::uniform(100, n).unwrap(), a.clone(), b.clone())
            .unwrap();
        for t in 0..=n {
            let fa: f64 = (0..=t).map(|i| a[i]).product();
            let fb: f64 = (t..=n).map(|i| b[i]).product();
            let (x, y) = p.weights_at(t).unwrap();
            assert!((x - fa).abs() < 1e-12 && (y - fb).abs() < 1e-12);
        }
    }

    #[test]
    fn reparam_powers_of_half() {
        let (a, _) = reparam_from_weights(&[1.0, 0.5, 0.25], &[0.2, 0.5, 1.0]).unwrap();
        assert_eq!(a, vec![1.0, 0.5, 0.5]);
    }

    #[test]
    fn reparam_of_table_ratio() {
        let p = vp(5);
        assert!((p.factors_a()[1] - 0.81015 / 0.99995).abs() < 1e-4);
        assert!((0.81015f64 / 0.99995 - 0.81019).abs() < 1e-5);
    }

    #[test]
    fn reparam_rejects_bad_weights() {
        assert!(matches!(
            reparam_from_weights(&[1.0, 0.6, 0.7], &[0.1, 0.5, 1.0]),
            Err(Error::Monotonicity { weight: "f_A", t: 2 })
        ));
        assert!(reparam_from_weights(&[1.0, 0.0, 0.0], &[0.1, 0.5, 1.0]).is_err());
        assert!(reparam_from_weights(&[1.0, 0.5, 0.2], &[0.1, 0.0, 1.0]).is_err());
        assert!(reparam_from_weights(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_round_trip() {
        for nfe in [5, 10, 20] {
            let p = init_linear(SubsampleMap::uniform(1000, nfe).unwrap()).unwrap();
            let q = PathSchedule::from_factors(p.map().clone(), p.factors_a().to_vec(), p.factors_b().to_vec())
                .unwrap();
            for t in 0..=nfe {
                assert!((p.fa()[t] - q.fa()[t]).abs() < 1e-10);
                assert!((p.fb()[t] - q.fb()[t]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn perturb_zero_is_identity_and_seeded() {
        let p = vp(20);
        assert_eq!(perturb(&p, 0.0, 1).unwrap(), p);
        let q1 = perturb(&p, 0.05, 11).unwrap();
        let q2 = perturb(&p, 0.05, 11).unwrap();
        assert_eq!(q1, q2);
        assert_ne!(q1, p);
        assert_eq!(q1.fa()[0], p.fa()[0]);
        assert_eq!(q1.fb()[20], p.fb()[20]);
    }

    #[test]
    fn normalize_examples() {
        let lin = init_linear(SubsampleMap::uniform(1000, 10).unwrap()).unwrap();
        let n = normalize_sum_to_one(&lin).unwrap();
        for t in 0..=10 {
            assert!((n.fa()[t] - lin.fa()[t]).abs() < 1e-12);
        }
        let map = SubsampleMap::uniform(4, 2).unwrap();
        let p = PathSchedule::from_weights(map, vec![1.0, 0.6, 0.2], vec![0.1, 0.6, 1.0]).unwrap();
        let n = normalize_sum_to_one(&p).unwrap();
        assert!((n.fa()[1] - 0.5).abs() < 1e-15 && (n.fb()[1] - 0.5).abs() < 1e-15);
        let v = normalize_sum_to_one(&vp(5)).unwrap();
        assert!((v.fa()[1] - 0.58024).abs() < 1e-4);
        for t in 0..=5 {
            assert!((v.fa()[t] + v.fb()[t] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = normalize_sum_to_one(&vp(10)).unwrap();
        let twice = normalize_sum_to_one(&once).unwrap();
        for t in 0..=10 {
            assert!((once.fa()[t] - twice.fa()[t]).abs() < 1e-15);
            assert!((once.fb()[t] - twice.fb()[t]).abs() < 1e-15);
        }
    }

    #[test]
    fn subsample_map_validation() {
        assert!(SubsampleMap::new(10, vec![]).is_err());
        assert!(SubsampleMap::new(10, vec![1, 2]).is_err());
        assert!(SubsampleMap::new(10, vec![0, 3, 3]).is_err());
        assert!(SubsampleMap::new(10, vec![0, 10]).is_err());
        assert_eq!(SubsampleMap::uniform(1000, 5).unwrap().selected(), &[0, 200, 400, 600, 800]);
        assert!(init_vp(0.02, 0.01, SubsampleMap::uniform(10, 2).unwrap()).is_err());
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let p = vp(5);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_step,f_A,f_B\n0,0.99995,0.01000\n200,0.81015,0.58622\n"));
        let q = PathSchedule::read_csv(text.as_bytes()).unwrap();
        assert_eq!(q.map(), p.map());
        for t in 0..=5 {
            assert!((q.fa()[t] - p.fa()[t]).abs() < 5e-6);
        }
        let bad = "time_step,f_A,f_B\n0,1.0,0.1\n5,1.2,0.5\n10,0.1,1.0\n";
        assert!(matches!(PathSchedule::read_csv(bad.as_bytes()), Err(Error::Monotonicity { .. })));
        assert!(PathSchedule::read_csv("t,a,b\n".as_bytes()).is_err());
    }

    fn monotone_weights() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(0.05f64..1.0, n + 1),
                prop::collection::vec(0.05f64..1.0, n + 1),
                0.1f64..3.0,
                0.1f64..3.0,
            )
                .prop_map(|(da, db, a0, bt)| {
                    let (a, b) = (da.clone(), db.clone());
                    let mut fa = vec![a0];
                    for x in &a[1..] {
                        let last = *fa.last().unwrap();
                        fa.push(last * x);
                    }
                    let mut fb = vec![0.0; b.len()];
                    let n = b.len() - 1;
                    fb[n] = bt;
                    for t in (0..n).rev() {
                        fb[t] = fb[t + 1] * b[t];
                    }
                    (fa, fb)
                })
        })
    }

    proptest! {
        #[test]
        fn weights_round_trip((fa, fb) in monotone_weights()) {
            let (a, b) = reparam_from_weights(&fa, &fb).unwrap();
            let (fa2, fb2) = weights_from_factors(&a, &b);
            for t in 0..fa.len() {
                prop_assert!((fa[t] - fa2[t]).abs() <= 1e-10 * fa[t].max(1.0));
                prop_assert!((fb[t] - fb2[t]).abs() <= 1e-10 * fb[t].max(1.0));
            }
        }
    }
}
