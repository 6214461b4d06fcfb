use super::FactorModel;
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, GradTape, Var};
use rand_distr::{Distribution, Normal};

/// `1 → hidden → hidden → 1` tanh perceptron with a logistic output, the
/// ablation stand-in for [`super::KanNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    hidden: usize,
    /// Per layer: row-major `out × in` weights followed by `out` biases.
    params: Vec<f64>,
}

impl MlpNet {
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Contract("hidden width must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut params = Vec::with_capacity(Self::count_for(hidden));
        for (fan_in, fan_out) in [(1, hidden), (hidden, hidden), (hidden, 1)] {
            let std = (1.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for _ in 0..fan_in * fan_out {
                params.push(normal.sample(&mut rng));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { hidden, params })
    }

    /// Widest network whose parameter count does not exceed `budget`.
    pub fn matched(budget: usize, seed: u64) -> Result<Self> {
        let mut h = 1;
        while Self::count_for(h + 1) <= budget {
            h += 1;
        }
        Self::new(h, seed)
    }

    pub fn count_for(hidden: usize) -> usize {
        hidden * hidden + 4 * hidden + 1
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn layout(&self) -> [(usize, usize, usize); 3] {
        let h = self.hidden;
        let l0 = 0;
        let l1 = l0 + 2 * h;
        let l2 = l1 + h * h + h;
        [(l0, 1, h), (l1, h, h), (l2, h, 1)]
    }
}

impl FactorModel for MlpNet {
    fn predict(&self, t_norm: f64) -> f64 {
        let mut act = vec![t_norm];
        for (li, (off, fan_in, fan_out)) in self.layout().into_iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            act = (0..fan_out)
                .map(|j| {
                    let mut s: f64 = (0..fan_in).map(|i| w[j * fan_in + i] * act[i]).sum();
                    s += b[j];
                    if li < 2 {
                        s.tanh()
                    } else {
                        s
                    }
                })
                .collect();
        }
        sigmoid(act[0])
    }

    fn groups(&self) -> Vec<(String, usize)> {
        self.layout()
            .iter()
            .enumerate()
            .map(|(l, (_, i, o))| (format!("mlp.layer{l}"), i * o + o))
            .collect()
    }

    fn params(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.params.copy_from_slice(p);
    }

    fn readout_features(&self, t_norm: f64) -> Vec<f64> {
        let mut act = vec![t_norm];
        for (off, fan_in, fan_out) in self.layout().into_iter().take(2) {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            act = (0..fan_out)
                .map(|j| ((0..fan_in).map(|i| w[j * fan_in + i] * act[i]).sum::<f64>() + b[j]).tanh())
                .collect();
        }
        act.push(1.0);
        act
    }

    fn readout_slots(&self) -> std::ops::Range<usize> {
        let (off, _, _) = self.layout()[2];
        off..self.params.len()
    }

    fn record(&self, tape: &mut GradTape, t_norm: f64) -> Var {
        // Weights of neuron j are contiguous; the bias sits after the weight block.
        let mut act = vec![tape.constant(t_norm)];
        for (li, (off, fan_in, fan_out)) in self.layout().into_iter().enumerate() {
            let mut next = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let s = tape.affine(&act, off + j * fan_in, false);
                let bias = tape.param(off + fan_in * fan_out + j);
                let z = tape.add(s, bias);
                next.push(if li < 2 { tape.tanh(z) } else { z });
            }
            act = next;
        }
        tape.sigmoid(act[0])
    }
}
