//! One-hidden-layer ReLU network with flat parameters and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LearnerError, Result};

/// Parameters laid out as `W1 (hidden x input)`, `b1`, `W2 (output x hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl MlpParams {
    pub fn num_params(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w: vec![0.0; Self::num_params(input, hidden, output)],
        }
    }

    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights and zero biases.
    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        let (w1, _, w2, _) = p.split_mut();
        w1.iter_mut().for_each(|x| *x = rng.random_range(-a1..a1));
        w2.iter_mut().for_each(|x| *x = rng.random_range(-a2..a2));
        p
    }

    fn offsets(&self) -> [usize; 4] {
        let o1 = self.hidden * self.input;
        let o2 = o1 + self.hidden;
        let o3 = o2 + self.output * self.hidden;
        [o1, o2, o3, o3 + self.output]
    }

    pub fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let [o1, o2, o3, _] = self.offsets();
        let (w1, rest) = self.w.split_at(o1);
        let (b1, rest) = rest.split_at(o2 - o1);
        let (w2, b2) = rest.split_at(o3 - o2);
        (w1, b1, w2, b2)
    }

    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let [o1, o2, o3, _] = self.offsets();
        let (w1, rest) = self.w.split_at_mut(o1);
        let (b1, rest) = rest.split_at_mut(o2 - o1);
        let (w2, b2) = rest.split_at_mut(o3 - o2);
        (w1, b1, w2, b2)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(LearnerError::ShapeMismatch {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_full(&self, x: &[f64]) -> Result<Activations> {
        self.check_input(x)?;
        let (w1, b1, w2, b2) = self.split();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &w1[h * self.input..(h + 1) * self.input];
                let z = b1[h] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let output = (0..self.output)
            .map(|o| {
                let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                b2[o] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Ok(Activations { hidden, output })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_full(x)?.output)
    }

    /// Adds the gradient of `sum_o dout[o] * Q_o(x)` to `grad`.
    pub fn backward(&self, x: &[f64], act: &Activations, dout: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        if dout.len() != self.output {
            return Err(LearnerError::ShapeMismatch {
                expected: self.output,
                got: dout.len(),
            });
        }
        if grad.len() != self.w.len() {
            return Err(LearnerError::ShapeMismatch {
                expected: self.w.len(),
                got: grad.len(),
            });
        }
        let [o1, o2, o3, _] = self.offsets();
        let (_, _, w2, _) = self.split();
        let mut dh = vec![0.0; self.hidden];
        for (o, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[o3 + o] += d;
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            let g = &mut grad[o2 + o * self.hidden..o2 + (o + 1) * self.hidden];
            for h in 0..self.hidden {
                g[h] += d * act.hidden[h];
                dh[h] += d * row[h];
            }
        }
        for h in 0..self.hidden {
            if act.hidden[h] <= 0.0 || dh[h] == 0.0 {
                continue;
            }
            grad[o1 + h] += dh[h];
            let g = &mut grad[h * self.input..(h + 1) * self.input];
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += dh[h] * xi;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|x| x.is_finite())
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || params.len() != self.m.len() {
            return Err(LearnerError::ShapeMismatch {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aoi_core::rng_from_seed;

    #[test]
    fn zero_net_outputs_zero() {
        let p = MlpParams::zeros(3, 24, 5);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn identity_layers_reproduce_input() {
        // W1 = I, W2 = I, zero biases: ReLU is the identity on non-negative input.
        let mut p = MlpParams::zeros(3, 3, 3);
        let (w1, _, w2, _) = p.split_mut();
        for i in 0..3 {
            w1[i * 3 + i] = 1.0;
            w2[i * 3 + i] = 1.0;
        }
        assert_eq!(p.forward(&[0.5, 2.0, 0.0]).unwrap(), vec![0.5, 2.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = MlpParams::zeros(3, 4, 2);
        assert!(matches!(
            p.forward(&[1.0]),
            Err(LearnerError::ShapeMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(2, 1e-3);
        let mut w = vec![1.0, -1.0];
        a.step(&mut w, &[0.5, -2.0]).unwrap();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut a = Adam::new(1, 0.05);
        let mut w = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (w[0] - 1.0)];
            a.step(&mut w, &g).unwrap();
        }
        assert!((w[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn glorot_is_seeded() {
        let a = MlpParams::glorot(4, 2, 3, &mut rng_from_seed(1, 0));
        let b = MlpParams::glorot(4, 2, 3, &mut rng_from_seed(1, 0));
        assert_eq!(a, b);
        assert!(a.w.iter().any(|&x| x != 0.0));
    }
}
