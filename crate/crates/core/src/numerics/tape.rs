//! Reverse-mode differentiation over a flat record of scalar operations.
//!
//! Each node stores the operation that produced it, so the tape can be
//! replayed from the registered parameters and re-derive every value. Model
//! parameters live in a single flat slot vector; `gradient` returns one
//! accumulated entry per slot.

use crate::kan::SplineGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(usize),
    Const(f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Vec<Var>),
    /// `Σ_k w[offset + k] · inputs[k] (+ w[offset + len])`
    Affine {
        inputs: Vec<Var>,
        offset: usize,
        bias: bool,
    },
    /// `Σ_i c[offset + i] · B_i(clamp(x))`
    Spline { x: Var, offset: usize, grid: SplineGrid },
}

/// Recorded computation graph over scalar values.
#[derive(Debug, Clone)]
pub struct GradTape {
    params: Vec<f64>,
    ops: Vec<Op>,
    values: Vec<f64>,
}

impl GradTape {
    /// Start a tape whose parameter slots hold `params`.
    pub fn new(params: Vec<f64>) -> Self {
        Self {
            params,
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    fn push(&mut self, op: Op) -> Var {
        let value = eval(&op, &self.values, &self.params);
        self.ops.push(op);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn param(&mut self, slot: usize) -> Var {
        assert!(slot < self.params.len(), "parameter slot {slot} not registered");
        self.push(Op::Param(slot))
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Op::Const(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.push(Op::Scale(a, k))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        self.push(Op::Sum(xs.to_vec()))
    }

    /// Weighted sum of `inputs` using parameter slots starting at `offset`,
    /// plus a bias slot right after the weights when `bias` is set.
    pub fn affine(&mut self, inputs: &[Var], offset: usize, bias: bool) -> Var {
        let end = offset + inputs.len() + usize::from(bias);
        assert!(end <= self.params.len(), "affine slots {offset}..{end} not registered");
        self.push(Op::Affine {
            inputs: inputs.to_vec(),
            offset,
            bias,
        })
    }

    /// B-spline with coefficients in slots `offset..offset + grid.basis_len()`.
    pub fn spline(&mut self, x: Var, offset: usize, grid: SplineGrid) -> Var {
        assert!(offset + grid.basis_len() <= self.params.len());
        self.push(Op::Spline { x, offset, grid })
    }

    /// Reverse sweep from `output`; returns one gradient entry per parameter slot.
    pub fn gradient(&self, output: Var) -> Vec<f64> {
        let mut adj = vec![0.0; output.0 + 1];
        let mut grads = vec![0.0; self.params.len()];
        adj[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match &self.ops[i] {
                Op::Param(slot) => grads[*slot] += g,
                Op::Const(_) => {}
                Op::Add(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a.0] += g * self.values[b.0];
                    adj[b.0] += g * self.values[a.0];
                }
                Op::Div(a, b) => {
                    let bv = self.values[b.0];
                    adj[a.0] += g / bv;
                    adj[b.0] -= g * self.values[a.0] / (bv * bv);
                }
                Op::Scale(a, k) => adj[a.0] += g * k,
                Op::Square(a) => adj[a.0] += 2.0 * g * self.values[a.0],
                Op::Sigmoid(a) => {
                    let s = self.values[i];
                    adj[a.0] += g * s * (1.0 - s);
                }
                Op::Tanh(a) => {
                    let t = self.values[i];
                    adj[a.0] += g * (1.0 - t * t);
                }
                Op::Sum(xs) => {
                    for x in xs {
                        adj[x.0] += g;
                    }
                }
                Op::Affine { inputs, offset, bias } => {
                    for (k, x) in inputs.iter().enumerate() {
                        adj[x.0] += g * self.params[offset + k];
                        grads[offset + k] += g * self.values[x.0];
                    }
                    if *bias {
                        grads[offset + inputs.len()] += g;
                    }
                }
                Op::Spline { x, offset, grid } => {
                    let xv = self.values[x.0];
                    let w = grid.window(xv);
                    for (k, b) in w.values().iter().enumerate() {
                        grads[offset + w.first + k] += g * b;
                    }
                    if xv >= grid.lo && xv <= grid.hi {
                        let c = &self.params[offset + w.first..offset + w.first + w.len];
                        let slope: f64 = c.iter().zip(w.derivs()).map(|(a, d)| a * d).sum();
                        adj[x.0] += g * slope;
                    }
                }
            }
        }
        grads
    }

    /// Re-evaluate every node from the recorded operations and parameters.
    pub fn replay(&self) -> Vec<f64> {
        let mut values = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = eval(op, &values, &self.params);
            values.push(v);
        }
        values
    }
}

fn eval(op: &Op, values: &[f64], params: &[f64]) -> f64 {
    match op {
        Op::Param(slot) => params[*slot],
        Op::Const(v) => *v,
        Op::Add(a, b) => values[a.0] + values[b.0],
        Op::Sub(a, b) => values[a.0] - values[b.0],
        Op::Mul(a, b) => values[a.0] * values[b.0],
        Op::Div(a, b) => values[a.0] / values[b.0],
        Op::Scale(a, k) => values[a.0] * k,
        Op::Square(a) => values[a.0] * values[a.0],
        Op::Sigmoid(a) => sigmoid(values[a.0]),
        Op::Tanh(a) => values[a.0].tanh(),
        Op::Sum(xs) => xs.iter().map(|x| values[x.0]).sum(),
        Op::Affine { inputs, offset, bias } => {
            let mut s: f64 = inputs
                .iter()
                .enumerate()
                .map(|(k, x)| params[offset + k] * values[x.0])
                .sum();
            if *bias {
                s += params[offset + inputs.len()];
            }
            s
        }
        Op::Spline { x, offset, grid } => {
            let w = grid.window(values[x.0]);
            let c = &params[offset + w.first..offset + w.first + w.len];
            c.iter().zip(w.values()).map(|(a, b)| a * b).sum()
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn build(params: &[f64]) -> (GradTape, Var) {
        let mut t = GradTape::new(params.to_vec());
        let a = t.param(0);
        let b = t.param(1);
        let c = t.constant(0.7);
        let ab = t.mul(a, b);
        let q = t.div(ab, c);
        let s = t.sigmoid(q);
        let th = t.tanh(a);
        let d = t.sub(s, th);
        let sq = t.square(d);
        let aff = t.affine(&[a, b, sq], 2, true);
        let grid = SplineGrid::new(0.0, 1.0, 6, 3).unwrap();
        let x = t.sigmoid(aff);
        let sp = t.spline(x, 6, grid);
        let out = t.sum(&[sp, sq, aff]);
        (t, out)
    }

    fn params() -> Vec<f64> {
        let mut p = vec![0.3, -0.8, 0.5, -0.2, 1.1, 0.05];
        p.extend((0..9).map(|i| (i as f64 * 0.37).sin()));
        p
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = params();
        let (tape, out) = build(&p);
        let g = tape.gradient(out);
        let fd = finite_diff_grad(
            |x| {
                let (t, o) = build(x);
                t.value(o)
            },
            &p,
            1e-6,
        )
        .unwrap();
        for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
            let rel = (a - b).abs() / b.abs().max(1e-3);
            assert!(rel < 1e-6, "slot {i}: tape {a} fd {b}");
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let (tape, _) = build(&params());
        let replayed = tape.replay();
        assert_eq!(replayed.len(), tape.len());
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v.to_bits(), tape.value(Var(i)).to_bits());
        }
    }

    #[test]
    fn one_gradient_slot_per_parameter() {
        let p = params();
        let (tape, out) = build(&p);
        assert_eq!(tape.gradient(out).len(), p.len());
    }

    #[test]
    fn clamped_spline_input_has_zero_slope() {
        let grid = SplineGrid::new(0.0, 1.0, 4, 3).unwrap();
        let mut t = GradTape::new(vec![1.0; grid.basis_len() + 1]);
        let x = t.param(grid.basis_len());
        let big = t.scale(x, 5.0);
        let sp = t.spline(big, 0, grid);
        let g = t.gradient(sp);
        assert_eq!(g[grid.basis_len()], 0.0);
    }
}
