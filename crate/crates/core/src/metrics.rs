//! Sample-quality measures for the 2D benchmark.

use crate::data::{in_support, seeded_rng, CheckerboardSpec, Point2};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default number of projections for [`sliced_wasserstein`].
pub const DEFAULT_PROJECTIONS: usize = 256;

/// Exact 2-Wasserstein distance between two empirical distributions on the
/// line, by matching quantile functions. Sizes may differ.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("empty sample set".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    // Walk the merged breakpoints k/na and k/nb of both quantile functions.
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        sum += (next - prev) * (a[i] - b[j]).powi(2);
        prev = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(sum.max(0.0).sqrt())
}

fn directions(n_proj: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = seeded_rng(seed);
    (0..n_proj)
        .map(|_| {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            (theta.cos(), theta.sin())
        })
        .collect()
}

/// Mean over `n_proj` seeded random unit directions of the 1-D
/// 2-Wasserstein distance between the projected point sets.
pub fn sliced_wasserstein(a: &[Point2], b: &[Point2], n_proj: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("empty sample set".into()));
    }
    if n_proj < 16 {
        return Err(Error::Contract(format!("need at least 16 projections, got {n_proj}")));
    }
    let mut total = 0.0;
    for (cx, cy) in directions(n_proj, seed) {
        let pa: Vec<f64> = a.iter().map(|p| cx * p.x + cy * p.y).collect();
        let pb: Vec<f64> = b.iter().map(|p| cx * p.x + cy * p.y).collect();
        total += wasserstein_1d(&pa, &pb)?;
    }
    Ok(total / n_proj as f64)
}

/// Fraction of samples inside occupied squares; 0 for an empty set.
pub fn in_support_fraction(samples: &[Point2], spec: &CheckerboardSpec) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|p| in_support(spec, **p)).count() as f64 / samples.len() as f64
}

/// Per-square sample counts for the occupied squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    /// `(col, row, count)` in the order of [`CheckerboardSpec::occupied_squares`].
    pub counts: Vec<(usize, usize, usize)>,
    /// Fraction of occupied squares holding at least 1% of all samples.
    pub coverage: f64,
}

pub fn mode_coverage(samples: &[Point2], spec: &CheckerboardSpec) -> ModeCoverage {
    let squares = spec.occupied_squares();
    let mut counts: Vec<(usize, usize, usize)> = squares.iter().map(|&(c, r)| (c, r, 0)).collect();
    for p in samples {
        if let Some(cell) = spec.cell_of(*p) {
            if let Some(k) = squares.iter().position(|&s| s == cell) {
                counts[k].2 += 1;
            }
        }
    }
    let threshold = 0.01 * samples.len() as f64;
    let covered = counts.iter().filter(|c| !samples.is_empty() && c.2 as f64 >= threshold).count();
    ModeCoverage {
        counts,
        coverage: covered as f64 / squares.len() as f64,
    }
}

/// Metrics report: metric name → value, plus the sample count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub n: usize,
    pub seed: u64,
}

/// Sliced Wasserstein against `reference`, support fraction and mode coverage.
pub fn evaluate(
    samples: &[Point2],
    reference: &[Point2],
    spec: &CheckerboardSpec,
    n_proj: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let mut metrics = BTreeMap::new();
    metrics.insert("sliced_wasserstein".into(), sliced_wasserstein(samples, reference, n_proj, seed)?);
    metrics.insert("in_support_fraction".into(), in_support_fraction(samples, spec));
    metrics.insert("mode_coverage".into(), mode_coverage(samples, spec).coverage);
    Ok(MetricsReport {
        metrics,
        n: samples.len(),
        seed,
    })
}
