//! Fully connected binary MLP: ReLU hidden layers, sigmoid output,
//! cross-entropy loss, plain mini-batch gradient descent.
//!
//! The first layer consumes sparse binary rows directly, so its forward pass
//! is a sum of weight rows and its gradient touches only present features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::dataset::View;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 64,
        }
    }
}

/// Dense layer; `weights` is row-major `[n_in][n_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

struct Trace {
    /// Post-activation outputs per layer, the last entry being the logit.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-uniform initialisation from `seed`.
    pub fn init(vocab: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![vocab];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0].max(1) as f64).sqrt();
                Layer {
                    n_in: w[0],
                    n_out: w[1],
                    weights: (0..w[0] * w[1])
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Mlp { layers }
    }

    fn forward(&self, row: &[u32]) -> Trace {
        let first = &self.layers[0];
        let mut z = first.bias.clone();
        for &j in row {
            let w = &first.weights[j as usize * first.n_out..(j as usize + 1) * first.n_out];
            z.iter_mut().zip(w).for_each(|(a, b)| *a += b);
        }
        let mut acts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers[1..] {
            z.iter_mut().for_each(|a| *a = a.max(0.0));
            let mut next = layer.bias.clone();
            for (i, &a) in z.iter().enumerate() {
                if a != 0.0 {
                    let w = &layer.weights[i * layer.n_out..(i + 1) * layer.n_out];
                    next.iter_mut().zip(w).for_each(|(o, b)| *o += a * b);
                }
            }
            acts.push(std::mem::replace(&mut z, next));
        }
        acts.push(z);
        Trace { acts }
    }

    pub fn logit(&self, row: &[u32]) -> f64 {
        self.forward(row).acts.last().expect("output layer")[0]
    }

    /// Mean cross-entropy over the rows.
    pub fn loss(&self, data: &View<'_>) -> f64 {
        data.rows
            .iter()
            .zip(&data.labels)
            .map(|(r, &y)| {
                let z = self.logit(r);
                softplus(z) - f64::from(y) * z
            })
            .sum::<f64>()
            / data.len() as f64
    }

    /// Adds `scale * dLoss_row/dparams` into `grads` (same layout as `layers`).
    fn backprop(&self, row: &[u32], y: u8, scale: f64, grads: &mut [Layer]) {
        let trace = self.forward(row);
        let out = trace.acts.last().expect("output layer")[0];
        let mut delta = vec![(sigmoid(out) - f64::from(y)) * scale];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads[l];
            g.bias.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            if l == 0 {
                for &j in row {
                    let w =
                        &mut g.weights[j as usize * layer.n_out..(j as usize + 1) * layer.n_out];
                    w.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
                }
                break;
            }
            // trace.acts[l - 1] is the ReLU output feeding this layer
            let input = &trace.acts[l - 1];
            let mut prev = vec![0.0; layer.n_in];
            for (i, &a) in input.iter().enumerate() {
                if a <= 0.0 {
                    continue;
                }
                let w = &layer.weights[i * layer.n_out..(i + 1) * layer.n_out];
                let gw = &mut g.weights[i * layer.n_out..(i + 1) * layer.n_out];
                let mut back = 0.0;
                for o in 0..layer.n_out {
                    gw[o] += a * delta[o];
                    back += w[o] * delta[o];
                }
                prev[i] = back;
            }
            delta = prev;
        }
    }

    fn zero_like(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer {
                n_in: l.n_in,
                n_out: l.n_out,
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.weights.len() {
                return l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        *self.param_mut(i) = value;
    }

    /// Gradient of `loss` flattened in parameter order (per layer: weights, then bias).
    pub fn gradient(&self, data: &View<'_>) -> Vec<f64> {
        let mut grads = self.zero_like();
        let scale = 1.0 / data.len() as f64;
        for (r, &y) in data.rows.iter().zip(&data.labels) {
            self.backprop(r, y, scale, &mut grads);
        }
        grads
            .into_iter()
            .flat_map(|l| l.weights.into_iter().chain(l.bias))
            .collect()
    }

    pub fn fit(p: &MlpParams, train: &View<'_>, seed: u64) -> Self {
        let mut net = Mlp::init(train.vocab_size, &p.hidden, derive_seed(seed, 0));
        let mut grads = net.zero_like();
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..p.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64 + 1));
            order.shuffle(&mut rng);
            for batch in order.chunks(p.batch_size) {
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    net.backprop(train.rows[i], train.labels[i], scale, &mut grads);
                }
                // first layer: only rows of present features carry gradient
                let n_out = net.layers[0].n_out;
                let mut touched: Vec<u32> = batch
                    .iter()
                    .flat_map(|&i| train.rows[i].iter().copied())
                    .collect();
                touched.sort_unstable();
                touched.dedup();
                for &j in &touched {
                    let span = j as usize * n_out..(j as usize + 1) * n_out;
                    let (w, g) = (
                        &mut net.layers[0].weights[span.clone()],
                        &mut grads[0].weights[span],
                    );
                    for (a, b) in w.iter_mut().zip(g.iter_mut()) {
                        *a -= p.learning_rate * *b;
                        *b = 0.0;
                    }
                }
                for (l, (layer, g)) in net.layers.iter_mut().zip(grads.iter_mut()).enumerate() {
                    if l > 0 {
                        for (a, b) in layer.weights.iter_mut().zip(g.weights.iter_mut()) {
                            *a -= p.learning_rate * *b;
                            *b = 0.0;
                        }
                    }
                    for (a, b) in layer.bias.iter_mut().zip(g.bias.iter_mut()) {
                        *a -= p.learning_rate * *b;
                        *b = 0.0;
                    }
                }
            }
        }
        net
    }

    /// Sigmoid of the output logit.
    pub fn score(&self, rows: &[&[u32]]) -> Vec<f64> {
        rows.par_iter().map(|r| sigmoid(self.logit(r))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_layout_matches_gradient_layout() {
        let net = Mlp::init(4, &[3], 1);
        assert_eq!(net.parameter_count(), 4 * 3 + 3 + 3 + 1);
        let rows = vec![vec![0, 2]];
        let g = net.gradient(&View::from_rows(4, &rows, &[1]));
        assert_eq!(g.len(), net.parameter_count());
        // feature 1 and 3 absent: their first-layer weights get no gradient
        assert!(g[3..6].iter().all(|&x| x == 0.0));
        assert_eq!(net.param(5), net.layers[0].weights[5]);
    }

    #[test]
    fn learns_separable_toy() {
        let rows: Vec<Vec<u32>> = (0..200)
            .map(|i| if i % 2 == 0 { vec![0, 3] } else { vec![1, 3] })
            .collect();
        let labels: Vec<u8> = (0..200).map(|i| u8::from(i % 2 == 0)).collect();
        let view = View::from_rows(4, &rows, &labels);
        let p = MlpParams {
            hidden: vec![8],
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 16,
        };
        let net = Mlp::fit(&p, &view, 9);
        let s = net.score(&view.rows);
        assert!(s[0] > 0.9 && s[1] < 0.1, "{:?}", &s[..2]);
    }
}
