//! Fully connected network with tanh hidden layers and hand-written
//! reverse-mode gradients, in 64-bit floats.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FmError;

/// Velocity field approximator. Parameters are stored flat, layer by
/// layer, each as a row-major `out × in` weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer activations kept for the backward pass; `acts[0]` is the input.
pub(crate) struct Tape {
    acts: Vec<Vec<f64>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl VelocityField {
    /// Random initialization with weights drawn from `N(0, 1/fan_in)` and
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, FmError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(FmError::Shape(format!("bad layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                let z: f64 = StandardNormal.sample(rng);
                params.push(z * scale);
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, FmError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(FmError::Shape(format!("bad layer sizes {sizes:?}")));
        }
        if params.len() != param_count(sizes) {
            return Err(FmError::Shape(format!(
                "{} parameters for sizes {sizes:?}, expected {}",
                params.len(),
                param_count(sizes)
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut tape = self.forward_tape(input);
        tape.acts.pop().expect("at least one layer")
    }

    pub(crate) fn forward_tape(&self, input: &[f64]) -> Tape {
        assert_eq!(input.len(), self.input_dim(), "input width");
        let mut acts = vec![input.to_vec()];
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let x = &acts[l];
            let mut y: Vec<f64> = (0..n_out)
                .map(|o| {
                    bias[o]
                        + weights[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
            off += n_in * n_out + n_out;
        }
        Tape { acts }
    }

    pub(crate) fn output<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        tape.acts.last().expect("at least one layer")
    }

    /// Adds `d loss / d params` to `grad`, given `d loss / d output`.
    pub(crate) fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &tape.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                prev.iter_mut()
                    .zip(&weights[o * n_in..(o + 1) * n_in])
                    .for_each(|(p, w)| *p += d * w);
            }
            // Input of layer l is tanh output of layer l - 1.
            prev.iter_mut().zip(x).for_each(|(p, a)| *p *= 1.0 - a * a);
            delta = prev;
        }
    }
}
