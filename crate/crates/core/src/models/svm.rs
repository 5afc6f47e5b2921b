//! Linear SVM: hinge loss with L2 penalty, trained by averaged stochastic
//! subgradient descent.
//!
//! The trainer minimises `lambda/2 |w|^2 + 1/n sum_i max(0, 1 - y_i (w.x_i + b))`
//! with `lambda = 1 / (C n)`, which is the usual primal
//! `1/2 |w|^2 + C sum_i hinge_i` divided by `C n`. The bias is not penalised.
//! Epochs visit rows in a seeded permutation; after every epoch the averaged
//! and the current iterate are scored on the full objective and the best one
//! seen so far is kept.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::View;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    /// Relative objective change between epochs that stops training.
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn margin(w: &[f64], b: f64, row: &[u32]) -> f64 {
    b + row.iter().map(|&j| w[j as usize]).sum::<f64>()
}

/// Primal objective `1/2 |w|^2 + C sum_i hinge_i`.
pub fn primal_objective(w: &[f64], b: f64, c: f64, train: &View<'_>) -> f64 {
    let hinge: f64 = train
        .rows
        .iter()
        .zip(&train.labels)
        .map(|(row, &y)| {
            let y = if y == 1 { 1.0 } else { -1.0 };
            (1.0 - y * margin(w, b, row)).max(0.0)
        })
        .sum();
    0.5 * w.iter().map(|x| x * x).sum::<f64>() + c * hinge
}

/// Weight vector stored as `scale * dir` so the per-step shrink is O(1), plus
/// a lazily maintained running sum `acc + acc_scale * dir` of past iterates.
struct ScaledWeights {
    dir: Vec<f64>,
    scale: f64,
    acc: Vec<f64>,
    acc_scale: f64,
    bias: f64,
    bias_acc: f64,
    steps: u64,
}

impl ScaledWeights {
    fn new(v: usize) -> Self {
        Self {
            dir: vec![0.0; v],
            scale: 1.0,
            acc: vec![0.0; v],
            acc_scale: 0.0,
            bias: 0.0,
            bias_acc: 0.0,
            steps: 0,
        }
    }

    fn margin(&self, row: &[u32]) -> f64 {
        self.bias + self.scale * row.iter().map(|&j| self.dir[j as usize]).sum::<f64>()
    }

    fn shrink(&mut self, factor: f64) {
        self.scale *= factor;
        if self.scale < 1e-9 {
            // fold the scale into dir after materialising the running sum
            for (a, x) in self.acc.iter_mut().zip(&mut self.dir) {
                *a += self.acc_scale * *x;
                *x *= self.scale;
            }
            self.acc_scale = 0.0;
            self.scale = 1.0;
        }
    }

    fn add(&mut self, row: &[u32], amount: f64) {
        let step = amount / self.scale;
        for &j in row {
            let j = j as usize;
            self.dir[j] += step;
            self.acc[j] -= self.acc_scale * step;
        }
    }

    fn record(&mut self) {
        self.acc_scale += self.scale;
        self.bias_acc += self.bias;
        self.steps += 1;
    }

    fn reset_average(&mut self) {
        self.acc.iter_mut().for_each(|x| *x = 0.0);
        self.acc_scale = 0.0;
        self.bias_acc = 0.0;
        self.steps = 0;
    }

    fn current(&self) -> (Vec<f64>, f64) {
        (self.dir.iter().map(|x| x * self.scale).collect(), self.bias)
    }

    fn average(&self) -> Option<(Vec<f64>, f64)> {
        if self.steps == 0 {
            return None;
        }
        let n = self.steps as f64;
        let w = self
            .acc
            .iter()
            .zip(&self.dir)
            .map(|(a, d)| (a + self.acc_scale * d) / n)
            .collect();
        Some((w, self.bias_acc / n))
    }
}

impl LinearSvm {
    pub fn fit(p: &SvmParams, train: &View<'_>, seed: u64) -> Self {
        let n = train.len();
        let lambda = 1.0 / (p.c * n as f64);
        let mean_sq = train.rows.iter().map(|r| r.len() as f64).sum::<f64>() / n as f64;
        let eta0 = (1.0 / (mean_sq + 1.0)).min(0.5 / lambda);
        let ys: Vec<f64> = train
            .labels
            .iter()
            .map(|&y| if y == 1 { 1.0 } else { -1.0 })
            .collect();

        let mut state = ScaledWeights::new(train.vocab_size);
        let mut order: Vec<usize> = (0..n).collect();
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        let mut prev_obj = f64::INFINITY;
        let mut t = 0u64;
        for epoch in 0..p.max_epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
            order.shuffle(&mut rng);
            if epoch == 1 {
                state.reset_average();
            }
            for &i in &order {
                let eta = eta0 / (1.0 + lambda * eta0 * t as f64);
                let m = state.margin(train.rows[i]);
                state.shrink(1.0 - eta * lambda);
                if ys[i] * m < 1.0 {
                    state.add(train.rows[i], eta * ys[i]);
                    state.bias += eta * ys[i];
                }
                state.record();
                t += 1;
            }
            let mut epoch_best = f64::INFINITY;
            for (w, b) in std::iter::once(state.current()).chain(state.average()) {
                let obj = primal_objective(&w, b, p.c, train);
                epoch_best = epoch_best.min(obj);
                if best.as_ref().is_none_or(|(o, _, _)| obj < *o) {
                    best = Some((obj, w, b));
                }
            }
            if (prev_obj - epoch_best).abs()
                <= p.tolerance * epoch_best.abs().max(f64::MIN_POSITIVE)
            {
                break;
            }
            prev_obj = epoch_best;
        }
        let (_, weights, bias) = best.expect("at least one epoch");
        LinearSvm { weights, bias }
    }

    pub fn decision(&self, row: &[u32]) -> f64 {
        margin(&self.weights, self.bias, row)
    }

    /// Logistic of the signed margin.
    pub fn score(&self, rows: &[&[u32]]) -> Vec<f64> {
        rows.par_iter()
            .map(|r| super::sigmoid(self.decision(r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lazy_average_matches_dense_average() {
        let mut s = ScaledWeights::new(3);
        let mut dense_sum = [0.0; 3];
        let steps: [(&[u32], f64, f64); 4] = [
            (&[0, 2], 0.5, 0.9),
            (&[1], -0.25, 0.5),
            (&[2], 1.0, 1e-10),
            (&[0, 1], -2.0, 0.7),
        ];
        for (row, amount, shrink) in steps {
            s.shrink(shrink);
            s.add(row, amount);
            s.record();
            let (w, _) = s.current();
            for j in 0..3 {
                dense_sum[j] += w[j];
            }
        }
        let (avg, _) = s.average().unwrap();
        for j in 0..3 {
            assert!(
                (avg[j] - dense_sum[j] / 4.0).abs() < 1e-9,
                "{j}: {} vs {}",
                avg[j],
                dense_sum[j] / 4.0
            );
        }
    }
}
