use super::{FactorModel, SplineGrid};
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, GradTape, Var};
use rand_distr::{Distribution, Normal};

/// Layer widths used for every path-factor network.
pub const KAN_WIDTHS: [usize; 5] = [1, 4, 16, 4, 1];

/// Default weight of the curvature penalty on spline coefficients.
pub const DEFAULT_SMOOTHNESS: f64 = 1e-7;

/// Init noise relative to the knot spacing; large values make hidden
/// features non-monotone in `t`.
const INIT_NOISE: f64 = 1e-3;

const MAGIC: &[u8; 8] = b"LDSBKAN\0";
const FORMAT_VERSION: u32 = 1;

/// Fully connected layer of learnable splines, one per input/output edge.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    pub in_width: usize,
    pub out_width: usize,
    /// Edge `(i, j)` owns `coefficients[(i * out_width + j) * basis_len ..][..basis_len]`.
    pub coefficients: Vec<f64>,
}

impl KanLayer {
    fn edge(&self, i: usize, j: usize, basis_len: usize) -> &[f64] {
        let start = (i * self.out_width + j) * basis_len;
        &self.coefficients[start..start + basis_len]
    }
}

/// Kolmogorov-Arnold network mapping normalized time to a factor in (0, 1).
///
/// Hidden nodes pass through a logistic map onto the grid domain with unit
/// slope at its center, so no activation can stall against the clamp. The
/// final node passes through a plain logistic squash.
#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    widths: Vec<usize>,
    grid: SplineGrid,
    layers: Vec<KanLayer>,
    smoothness: f64,
}

impl KanNetwork {
    /// All-zero coefficients; the output is `sigmoid(0) = 0.5` everywhere.
    pub fn zeros(widths: &[usize], grid: SplineGrid) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || widths[0] != 1 || *widths.last().unwrap() != 1 {
            return Err(Error::Contract(format!("invalid KAN widths {widths:?}")));
        }
        let nb = grid.basis_len();
        let layers = widths
            .windows(2)
            .map(|w| KanLayer {
                in_width: w[0],
                out_width: w[1],
                coefficients: vec![0.0; w[0] * w[1] * nb],
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            grid,
            layers,
            smoothness: DEFAULT_SMOOTHNESS,
        })
    }

    /// Near-identity start: each edge spline is `x / in_width` plus tiny
    /// seeded noise to break symmetry, so activations stay spread across the grid.
    pub fn new(widths: &[usize], grid: SplineGrid, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths, grid)?;
        let greville = grid.greville();
        let noise = Normal::new(0.0, INIT_NOISE * grid.spacing()).unwrap();
        let mut rng = seeded_rng(seed);
        let nb = grid.basis_len();
        for layer in &mut net.layers {
            let scale = 1.0 / layer.in_width as f64;
            for (idx, c) in layer.coefficients.iter_mut().enumerate() {
                *c = greville[idx % nb] * scale + noise.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// Standard network for a path of `total_steps` steps.
    pub fn for_steps(total_steps: usize, seed: u64) -> Result<Self> {
        Self::new(&KAN_WIDTHS, SplineGrid::for_steps(total_steps)?, seed)
    }

    /// Weight of the penalty on squared second differences of each edge's
    /// coefficients; it keeps splines from turning jagged between samples.
    pub fn with_smoothness(mut self, weight: f64) -> Self {
        self.smoothness = weight;
        self
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    /// Output before the squash.
    pub fn raw(&self, t_norm: f64) -> f64 {
        let nb = self.grid.basis_len();
        let (lo, width, mid, slope) = self.hidden_map();
        let last = self.layers.len() - 1;
        let mut h = vec![t_norm];
        for (l, layer) in self.layers.iter().enumerate() {
            h = (0..layer.out_width)
                .map(|j| {
                    let z: f64 = (0..layer.in_width)
                        .map(|i| self.grid.eval(layer.edge(i, j, nb), h[i]).0)
                        .sum();
                    if l < last {
                        sigmoid((z - mid) * slope) * width + lo
                    } else {
                        z
                    }
                })
                .collect();
        }
        h[0]
    }

    /// `(lo, width, center, slope)` of the hidden-node map `lo + width·σ(slope·(z − center))`.
    fn hidden_map(&self) -> (f64, f64, f64, f64) {
        let width = self.grid.hi - self.grid.lo;
        (self.grid.lo, width, self.grid.lo + 0.5 * width, 4.0 / width)
    }

    pub fn forward(&self, t_norm: f64) -> f64 {
        sigmoid(self.raw(t_norm))
    }

    /// Versioned little-endian blob: magic, version, widths, grid, coefficients.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.grid.lo.to_le_bytes());
        out.extend_from_slice(&self.grid.hi.to_le_bytes());
        out.extend_from_slice(&(self.grid.grid_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid.degree as u32).to_le_bytes());
        for layer in &self.layers {
            for c in &layer.coefficients {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Parse("not a KAN blob".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported KAN blob version {version}")));
        }
        let n = r.u32()? as usize;
        let widths = (0..n).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let lo = r.f64()?;
        let hi = r.f64()?;
        let count = r.u32()? as usize;
        let degree = r.u32()? as usize;
        let mut net = Self::zeros(&widths, SplineGrid::new(lo, hi, count, degree)?)?;
        for layer in &mut net.layers {
            for c in &mut layer.coefficients {
                *c = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes in KAN blob".into()));
        }
        Ok(net)
    }

    /// Size of the serialized network.
    pub fn size_bytes(&self) -> usize {
        self.to_bytes().len()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Parse("truncated KAN blob".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl FactorModel for KanNetwork {
    fn predict(&self, t_norm: f64) -> f64 {
        self.forward(t_norm)
    }

    fn groups(&self) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| (format!("kan.layer{l}"), layer.coefficients.len()))
            .collect()
    }

    fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.coefficients.iter().copied()).collect()
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for layer in &mut self.layers {
            let n = layer.coefficients.len();
            layer.coefficients.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    fn record(&self, tape: &mut GradTape, t_norm: f64) -> Var {
        let nb = self.grid.basis_len();
        let (lo, width, mid, slope) = self.hidden_map();
        let last = self.layers.len() - 1;
        let mut h = vec![tape.constant(t_norm)];
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.out_width);
            for j in 0..layer.out_width {
                let terms: Vec<Var> = (0..layer.in_width)
                    .map(|i| tape.spline(h[i], offset + (i * layer.out_width + j) * nb, self.grid))
                    .collect();
                let z = tape.sum(&terms);
                if l < last {
                    let c = tape.constant(mid);
                    let d = tape.sub(z, c);
                    let d = tape.scale(d, slope);
                    let s = tape.sigmoid(d);
                    let s = tape.scale(s, width);
                    let lo = tape.constant(lo);
                    next.push(tape.add(s, lo));
                } else {
                    next.push(z);
                }
            }
            offset += layer.coefficients.len();
            h = next;
        }
        tape.sigmoid(h[0])
    }

    fn readout_features(&self, t_norm: f64) -> Vec<f64> {
        let nb = self.grid.basis_len();
        let (lo, width, mid, slope) = self.hidden_map();
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        let mut h = vec![t_norm];
        for layer in hidden {
            h = (0..layer.out_width)
                .map(|j| {
                    let z: f64 = (0..layer.in_width)
                        .map(|i| self.grid.eval(layer.edge(i, j, nb), h[i]).0)
                        .sum();
                    sigmoid((z - mid) * slope) * width + lo
                })
                .collect();
        }
        debug_assert_eq!(last[0].out_width, 1);
        h.iter().flat_map(|&x| self.grid.basis(x)).collect()
    }

    fn readout_slots(&self) -> std::ops::Range<usize> {
        let n = self.param_count();
        n - self.layers.last().unwrap().coefficients.len()..n
    }

    fn readout_curvature(&self) -> Option<(usize, f64)> {
        Some((self.grid.basis_len(), self.smoothness))
    }

    fn regularizer(&self) -> (f64, Vec<f64>) {
        let nb = self.grid.basis_len();
        let mut grad = vec![0.0; self.param_count()];
        let mut value = 0.0;
        let mut off = 0;
        // The readout's curvature is handled by the readout solve.
        let hidden = &self.layers[..self.layers.len() - 1];
        for layer in hidden {
            for (e, c) in layer.coefficients.chunks(nb).enumerate() {
                let base = off + e * nb;
                for k in 1..nb - 1 {
                    let d = c[k - 1] - 2.0 * c[k] + c[k + 1];
                    value += self.smoothness * d * d;
                    let g = 2.0 * self.smoothness * d;
                    grad[base + k - 1] += g;
                    grad[base + k] -= 2.0 * g;
                    grad[base + k + 1] += g;
                }
            }
            off += layer.coefficients.len();
        }
        (value, grad)
    }
}
