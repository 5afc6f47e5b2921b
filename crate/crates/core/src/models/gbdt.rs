//! Gradient boosting on logloss with oblivious (symmetric) trees.
//!
//! Every level of a tree tests one feature for all nodes at that level, so a
//! depth-`d` tree is a list of `d` features and `2^d` leaf values; the leaf of
//! a row is the bit pattern of its answers (bit `l` set when the level-`l`
//! feature is present). Level features are chosen greedily by the Newton
//! gain `sum_leaf G^2 / (H + l2_leaf_reg)`, and leaf values are the damped
//! Newton steps `-learning_rate * G / (H + l2_leaf_reg)`.
//!
//! Histograms are accumulated per feature over a column index in row order,
//! so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::dataset::View;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub depth: usize,
    pub l2_leaf_reg: f64,
}

impl Default for GbdtParams {
    /// 1000 iterations, learning rate 0.1, depth 10, l2_leaf_reg 5.
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.1,
            depth: 10,
            l2_leaf_reg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub features: Vec<u32>,
    pub leaf_values: Vec<f64>,
}

impl ObliviousTree {
    pub fn leaf_index(&self, row: &[u32]) -> usize {
        self.features.iter().enumerate().fold(0, |idx, (level, f)| {
            idx | (usize::from(row.binary_search(f).is_ok()) << level)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    /// Log-odds of the training base rate.
    pub base_score: f64,
    pub trees: Vec<ObliviousTree>,
}

/// Mean logloss of raw scores.
pub fn logloss(raw: &[f64], labels: &[u8]) -> f64 {
    raw.iter()
        .zip(labels)
        .map(|(&f, &y)| softplus(f) - f64::from(y) * f)
        .sum::<f64>()
        / raw.len() as f64
}

fn newton_score(g: f64, h: f64, l2: f64) -> f64 {
    if h + l2 > 0.0 {
        g * g / (h + l2)
    } else {
        0.0
    }
}

impl Gbdt {
    pub fn fit(p: &GbdtParams, train: &View<'_>) -> Self {
        Self::fit_with_history(p, train).0
    }

    /// Also returns the training logloss after each boosting iteration.
    pub fn fit_with_history(p: &GbdtParams, train: &View<'_>) -> (Self, Vec<f64>) {
        let n = train.len();
        let v = train.vocab_size;
        let mut columns: Vec<Vec<u32>> = vec![Vec::new(); v];
        for (i, row) in train.rows.iter().enumerate() {
            for &j in row.iter() {
                columns[j as usize].push(i as u32);
            }
        }
        let pos = train.n_positive() as f64;
        let rate = (pos / n as f64).clamp(1e-12, 1.0 - 1e-12);
        let base_score = (rate / (1.0 - rate)).ln();
        let mut raw = vec![base_score; n];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut leaf = vec![0u32; n];
        let mut trees = Vec::with_capacity(p.iterations);
        let mut history = Vec::with_capacity(p.iterations);
        let l2 = p.l2_leaf_reg;

        for _ in 0..p.iterations {
            for i in 0..n {
                let prob = sigmoid(raw[i]);
                grad[i] = prob - f64::from(train.labels[i]);
                hess[i] = prob * (1.0 - prob);
            }
            leaf.iter_mut().for_each(|l| *l = 0);
            let mut features: Vec<u32> = Vec::with_capacity(p.depth);
            for level in 0..p.depth {
                let n_leaves = 1usize << level;
                let mut g_tot = vec![0.0; n_leaves];
                let mut h_tot = vec![0.0; n_leaves];
                for i in 0..n {
                    g_tot[leaf[i] as usize] += grad[i];
                    h_tot[leaf[i] as usize] += hess[i];
                }
                let current: f64 = (0..n_leaves)
                    .map(|l| newton_score(g_tot[l], h_tot[l], l2))
                    .sum();
                let best = (0..v)
                    .into_par_iter()
                    .filter(|&f| !columns[f].is_empty() && !features.contains(&(f as u32)))
                    .map_init(
                        || (vec![0.0; n_leaves], vec![0.0; n_leaves]),
                        |(gp, hp), f| {
                            gp.iter_mut().for_each(|x| *x = 0.0);
                            hp.iter_mut().for_each(|x| *x = 0.0);
                            for &i in &columns[f] {
                                let i = i as usize;
                                gp[leaf[i] as usize] += grad[i];
                                hp[leaf[i] as usize] += hess[i];
                            }
                            let gain: f64 = (0..n_leaves)
                                .map(|l| {
                                    newton_score(gp[l], hp[l], l2)
                                        + newton_score(g_tot[l] - gp[l], h_tot[l] - hp[l], l2)
                                })
                                .sum();
                            (gain, f)
                        },
                    )
                    .reduce(
                        || (f64::NEG_INFINITY, usize::MAX),
                        |a, b| {
                            // higher gain wins; equal gain goes to the lower feature index
                            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                                b
                            } else {
                                a
                            }
                        },
                    );
                if best.1 == usize::MAX || best.0 <= current * (1.0 + 1e-12) {
                    break;
                }
                let f = best.1;
                for &i in &columns[f] {
                    leaf[i as usize] |= 1 << level;
                }
                features.push(f as u32);
            }
            let n_leaves = 1usize << features.len();
            let mut g = vec![0.0; n_leaves];
            let mut h = vec![0.0; n_leaves];
            for i in 0..n {
                g[leaf[i] as usize] += grad[i];
                h[leaf[i] as usize] += hess[i];
            }
            let leaf_values: Vec<f64> = (0..n_leaves)
                .map(|l| {
                    if h[l] + l2 > 0.0 {
                        -p.learning_rate * g[l] / (h[l] + l2)
                    } else {
                        0.0
                    }
                })
                .collect();
            for i in 0..n {
                raw[i] += leaf_values[leaf[i] as usize];
            }
            history.push(logloss(&raw, &train.labels));
            trees.push(ObliviousTree {
                features,
                leaf_values,
            });
        }
        (Gbdt { base_score, trees }, history)
    }

    pub fn raw_score(&self, row: &[u32]) -> f64 {
        self.base_score
            + self
                .trees
                .iter()
                .map(|t| t.leaf_values[t.leaf_index(row)])
                .sum::<f64>()
    }

    /// Logistic of the summed leaf values.
    pub fn score(&self, rows: &[&[u32]]) -> Vec<f64> {
        rows.par_iter()
            .map(|r| sigmoid(self.raw_score(r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_index_bits() {
        let t = ObliviousTree {
            features: vec![3, 1],
            leaf_values: vec![0.0; 4],
        };
        assert_eq!(t.leaf_index(&[]), 0);
        assert_eq!(t.leaf_index(&[3]), 1);
        assert_eq!(t.leaf_index(&[1]), 2);
        assert_eq!(t.leaf_index(&[1, 3, 7]), 3);
    }

    #[test]
    fn learns_single_indicator() {
        let rows: Vec<Vec<u32>> = (0..40)
            .map(|i| if i % 4 == 0 { vec![0, 2] } else { vec![2] })
            .collect();
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 4 == 0)).collect();
        let view = View::from_rows(3, &rows, &labels);
        let p = GbdtParams {
            iterations: 50,
            learning_rate: 0.3,
            depth: 3,
            l2_leaf_reg: 1.0,
        };
        let (m, hist) = Gbdt::fit_with_history(&p, &view);
        let s = m.score(&view.rows);
        assert!(s[0] > 0.9 && s[1] < 0.1);
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        // feature 2 is constant: never chosen
        assert!(m.trees.iter().all(|t| !t.features.contains(&2)));
    }
}
