//! Two-dimensional checkerboard target and Gaussian prior.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};
use std::path::Path;

/// Seeded generator used everywhere randomness is needed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn max_abs_diff(self, o: Point2) -> f64 {
        (self.x - o.x).abs().max((self.y - o.y).abs())
    }

    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    #[inline]
    fn mul(self, p: Point2) -> Point2 {
        Point2::new(self * p.x, self * p.y)
    }
}

/// Which color of the board carries probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// Squares whose row + column index is even.
    Even,
    Odd,
}

/// Square board on `[-extent, extent]²` split into `squares_per_side²` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerboardSpec {
    pub squares_per_side: usize,
    pub extent: f64,
    pub occupied: Parity,
}

impl Default for CheckerboardSpec {
    fn default() -> Self {
        Self {
            squares_per_side: 4,
            extent: 2.0,
            occupied: Parity::Even,
        }
    }
}

impl CheckerboardSpec {
    pub fn new(squares_per_side: usize, extent: f64, occupied: Parity) -> Result<Self> {
        let spec = Self {
            squares_per_side,
            extent,
            occupied,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.squares_per_side < 2 || self.squares_per_side % 2 != 0 {
            return Err(Error::Contract(format!(
                "squares_per_side must be even and >= 2, got {}",
                self.squares_per_side
            )));
        }
        if !(self.extent > 0.0) || !self.extent.is_finite() {
            return Err(Error::Contract(format!("extent must be positive, got {}", self.extent)));
        }
        Ok(())
    }

    #[inline]
    pub fn side(&self) -> f64 {
        2.0 * self.extent / self.squares_per_side as f64
    }

    fn is_occupied(&self, col: usize, row: usize) -> bool {
        let even = (col + row) % 2 == 0;
        match self.occupied {
            Parity::Even => even,
            Parity::Odd => !even,
        }
    }

    /// Occupied squares as `(col, row)` in row-major order.
    pub fn occupied_squares(&self) -> Vec<(usize, usize)> {
        let n = self.squares_per_side;
        (0..n)
            .flat_map(|row| (0..n).map(move |col| (col, row)))
            .filter(|&(c, r)| self.is_occupied(c, r))
            .collect()
    }

    /// Cell `(col, row)` containing `p`, if `p` is on the board.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let e = self.extent;
        if !p.is_finite() || p.x < -e || p.x >= e || p.y < -e || p.y >= e {
            return None;
        }
        let side = self.side();
        let n = self.squares_per_side;
        let col = (((p.x + e) / side).floor() as usize).min(n - 1);
        let row = (((p.y + e) / side).floor() as usize).min(n - 1);
        Some((col, row))
    }

    /// Center of cell `(col, row)`.
    pub fn center(&self, col: usize, row: usize) -> Point2 {
        let side = self.side();
        Point2::new(
            -self.extent + (col as f64 + 0.5) * side,
            -self.extent + (row as f64 + 0.5) * side,
        )
    }
}

/// True iff `p` lies inside an occupied square.
pub fn in_support(spec: &CheckerboardSpec, p: Point2) -> bool {
    spec.cell_of(p).is_some_and(|(c, r)| spec.is_occupied(c, r))
}

/// `n` points uniform over the occupied squares.
pub fn checkerboard_sample(spec: &CheckerboardSpec, n: usize, seed: u64) -> Result<Vec<Point2>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Contract("sample count must be positive".into()));
    }
    let squares = spec.occupied_squares();
    let side = spec.side();
    let mut rng = seeded_rng(seed);
    Ok((0..n)
        .map(|_| {
            let (c, r) = squares[rng.random_range(0..squares.len())];
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            Point2::new(
                -spec.extent + (c as f64 + u) * side,
                -spec.extent + (r as f64 + v) * side,
            )
        })
        .collect())
}

/// `n` i.i.d. standard normal points.
pub fn gaussian_sample(n: usize, seed: u64) -> Result<Vec<Point2>> {
    if n == 0 {
        return Err(Error::Contract("sample count must be positive".into()));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..n).map(|_| Point2::standard_normal(&mut rng)).collect())
}

/// Format with 9 significant digits.
pub(crate) fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, v)
    } else {
        format!("{v:.8e}")
    }
}

pub fn write_points_csv<W: Write>(mut w: W, points: &[Point2]) -> Result<()> {
    writeln!(w, "x,y")?;
    for p in points {
        writeln!(w, "{},{}", fmt_sig9(p.x), fmt_sig9(p.y))?;
    }
    Ok(())
}

pub fn read_points_csv<R: BufRead>(r: R) -> Result<Vec<Point2>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "x,y" {
        return Err(Error::Parse("expected header `x,y`".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let mut field = |name: &str| -> Result<f64> {
            it.next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("row {}: bad {name}", i + 2)))
        };
        let x = field("x")?;
        let y = field("y")?;
        out.push(Point2::new(x, y));
    }
    Ok(out)
}

pub fn save_points_csv(path: &Path, points: &[Point2]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_points_csv(f, points)
}

pub fn load_points_csv(path: &Path) -> Result<Vec<Point2>> {
    read_points_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
