use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Highest supported spline degree.
pub const MAX_DEGREE: usize = 7;

/// Uniform knot grid over `[lo, hi]` with `degree` padding knots on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub grid_count: usize,
    pub degree: usize,
}

/// The `degree + 1` basis functions that can be nonzero at one point.
#[derive(Debug, Clone, Copy)]
pub struct BasisWindow {
    /// Index of the first basis function in the window.
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
    pub derivs: [f64; MAX_DEGREE + 1],
    pub len: usize,
}

impl BasisWindow {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs[..self.len]
    }
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, grid_count: usize, degree: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Contract(format!("spline domain [{lo}, {hi}] is empty")));
        }
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::Contract(format!("unsupported spline degree {degree}")));
        }
        if grid_count < degree + 1 {
            return Err(Error::Contract(format!(
                "grid_count {grid_count} must be at least degree + 1 = {}",
                degree + 1
            )));
        }
        Ok(Self { lo, hi, grid_count, degree })
    }

    /// Cubic grid on `[0, 1]` with twice as many intervals as path steps.
    pub fn for_steps(total_steps: usize) -> Result<Self> {
        Self::new(0.0, 1.0, 2 * total_steps, 3)
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.grid_count as f64
    }

    /// Number of basis functions (and coefficients per edge).
    #[inline]
    pub fn basis_len(&self) -> usize {
        self.grid_count + self.degree
    }

    #[inline]
    pub fn knot(&self, j: usize) -> f64 {
        self.lo + (j as f64 - self.degree as f64) * self.spacing()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.grid_count + 2 * self.degree).map(|j| self.knot(j)).collect()
    }

    /// Greville abscissae; coefficients set to these reproduce `f(x) = x`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.basis_len())
            .map(|i| (1..=self.degree).map(|k| self.knot(i + k)).sum::<f64>() / self.degree as f64)
            .collect()
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Nonzero basis values and first derivatives at `x` (clamped to the domain).
    pub fn window(&self, x: f64) -> BasisWindow {
        let p = self.degree;
        let h = self.spacing();
        let x = self.clamp(x);
        let cell = (((x - self.lo) / h).floor() as isize).clamp(0, self.grid_count as isize - 1);
        let span = cell as usize + p;

        // Cox–de Boor triangle, keeping the degree p-1 row for derivatives.
        let mut n = [0.0; MAX_DEGREE + 1];
        let mut lower = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=p {
            if j == p {
                lower[..p].copy_from_slice(&n[..p]);
            }
            left[j] = x - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }

        let mut derivs = [0.0; MAX_DEGREE + 1];
        for k in 0..=p {
            let a = if k >= 1 { lower[k - 1] } else { 0.0 };
            let b = if k < p { lower[k] } else { 0.0 };
            derivs[k] = (a - b) / h;
        }
        BasisWindow {
            first: span - p,
            values: n,
            derivs,
            len: p + 1,
        }
    }

    /// Dense basis vector of length `basis_len()` at `x`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let w = self.window(x);
        let mut out = vec![0.0; self.basis_len()];
        out[w.first..w.first + w.len].copy_from_slice(w.values());
        out
    }

    /// `Σ c_i B_i(x)` and its derivative in `x`; the derivative is zero
    /// outside the domain because inputs are clamped.
    pub fn eval(&self, coefs: &[f64], x: f64) -> (f64, f64) {
        let w = self.window(x);
        let c = &coefs[w.first..w.first + w.len];
        let value = c.iter().zip(w.values()).map(|(a, b)| a * b).sum();
        let slope = if x < self.lo || x > self.hi {
            0.0
        } else {
            c.iter().zip(w.derivs()).map(|(a, b)| a * b).sum()
        };
        (value, slope)
    }

    /// Support interval `[t_i, t_{i+degree+1}]` of basis function `i`.
    pub fn support(&self, i: usize) -> (f64, f64) {
        (self.knot(i), self.knot(i + self.degree + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Textbook recursion, evaluated independently of `window`.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut out = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            out += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            out += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        out
    }

    #[test]
    fn partition_of_unity() {
        let g = SplineGrid::for_steps(10).unwrap();
        for k in 1..1000 {
            let x = k as f64 / 1000.0;
            let s: f64 = g.basis(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "x={x} sum={s}");
        }
    }

    #[test]
    fn local_support_at_knots() {
        let g = SplineGrid::new(0.0, 1.0, 8, 3).unwrap();
        for j in 0..=8 {
            let x = j as f64 / 8.0;
            let nz = g.basis(x).iter().filter(|v| **v != 0.0).count();
            assert!(nz <= 4, "x={x} has {nz} nonzero entries");
            assert!(g.basis(x).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn matches_recursive_definition() {
        let g = SplineGrid::new(-1.0, 2.0, 12, 3).unwrap();
        let knots = g.knots();
        let mut max = 0.0f64;
        for k in 0..100 {
            let x = -1.0 + 3.0 * (k as f64 + 0.37) / 100.0;
            let fast = g.basis(x);
            for (i, v) in fast.iter().enumerate() {
                max = max.max((v - cox_de_boor(&knots, i, 3, x)).abs());
            }
        }
        assert!(max < 1e-12, "max diff {max}");
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = SplineGrid::new(0.0, 1.0, 10, 3).unwrap();
        let coefs: Vec<f64> = (0..g.basis_len()).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.4).collect();
        for k in 1..50 {
            let x = k as f64 / 50.0 + 0.003;
            let (_, d) = g.eval(&coefs, x);
            let h = 1e-6;
            let fd = (g.eval(&coefs, x + h).0 - g.eval(&coefs, x - h).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6, "x={x}: {d} vs {fd}");
        }
    }

    #[test]
    fn greville_coefficients_reproduce_identity() {
        let g = SplineGrid::for_steps(5).unwrap();
        let c = g.greville();
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            assert!((g.eval(&c, x).0 - x).abs() < 1e-12);
        }
    }

    #[test]
    fn right_end_is_included() {
        let g = SplineGrid::for_steps(5).unwrap();
        let s: f64 = g.basis(1.0).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(g.basis(1.7), g.basis(1.0));
        assert_eq!(g.basis(-3.0), g.basis(0.0));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SplineGrid::new(1.0, 0.0, 10, 3).is_err());
        assert!(SplineGrid::new(0.0, 1.0, 3, 3).is_err());
        assert!(SplineGrid::new(0.0, 1.0, 10, 0).is_err());
    }
}
