//! Bernoulli naive Bayes with Laplace smoothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::View;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbParams {
    pub alpha: f64,
}

impl Default for NbParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// Per class `c`: `log P(c) + sum_f log(1 - p_cf)` is stored in `base[c]`, and
/// `delta[f][c] = log p_cf - log(1 - p_cf)` is added for each present feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub log_prior: [f64; 2],
    pub base: [f64; 2],
    pub delta: Vec<[f64; 2]>,
}

impl NaiveBayes {
    pub fn fit(p: &NbParams, train: &View<'_>) -> Self {
        let v = train.vocab_size;
        let mut counts = vec![[0u64; 2]; v];
        let mut n = [0u64; 2];
        for (row, &y) in train.rows.iter().zip(&train.labels) {
            let c = usize::from(y);
            n[c] += 1;
            for &j in row.iter() {
                counts[j as usize][c] += 1;
            }
        }
        let total = (n[0] + n[1]) as f64;
        let log_prior = [(n[0] as f64 / total).ln(), (n[1] as f64 / total).ln()];
        let mut base = log_prior;
        let delta = counts
            .iter()
            .map(|cnt| {
                let mut d = [0.0; 2];
                for c in 0..2 {
                    let prob = (cnt[c] as f64 + p.alpha) / (n[c] as f64 + 2.0 * p.alpha);
                    let (lp, lq) = (prob.ln(), (-prob).ln_1p());
                    base[c] += lq;
                    d[c] = lp - lq;
                }
                d
            })
            .collect();
        NaiveBayes {
            log_prior,
            base,
            delta,
        }
    }

    /// Joint log-likelihoods `[benign, malware]` of one row.
    pub fn joint_log_likelihood(&self, row: &[u32]) -> [f64; 2] {
        let mut l = self.base;
        for &j in row {
            let d = self.delta[j as usize];
            l[0] += d[0];
            l[1] += d[1];
        }
        l
    }

    pub fn score(&self, rows: &[&[u32]]) -> Vec<f64> {
        rows.par_iter()
            .map(|row| {
                let [l0, l1] = self.joint_log_likelihood(row);
                // a class unseen in training has log prior -inf
                if l1 == f64::NEG_INFINITY {
                    0.0
                } else if l0 == f64::NEG_INFINITY {
                    1.0
                } else {
                    super::sigmoid(l1 - l0)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_training_scores_that_class() {
        let rows = vec![vec![0], vec![1]];
        let view = View::from_rows(2, &rows, &[1, 1]);
        let m = NaiveBayes::fit(&NbParams::default(), &view);
        assert_eq!(m.score(&view.rows), vec![1.0, 1.0]);
        let ben = NaiveBayes::fit(&NbParams::default(), &View::from_rows(2, &rows, &[0, 0]));
        assert_eq!(ben.score(&[&[0u32][..], &[][..]]), vec![0.0, 0.0]);
    }

    #[test]
    fn unseen_feature_is_smoothed() {
        let rows = vec![vec![0], vec![]];
        let view = View::from_rows(3, &rows, &[1, 0]);
        let m = NaiveBayes::fit(&NbParams { alpha: 1.0 }, &view);
        // feature 2 never seen: p = 1/3 for both classes, so it cancels
        let s = m.score(&[&[2u32][..], &[][..]]);
        assert!((s[0] - s[1]).abs() < 1e-15);
        assert!(s.iter().all(|x| x.is_finite()));
    }
}
