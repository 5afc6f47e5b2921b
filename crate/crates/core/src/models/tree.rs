//! Gini decision trees on binary "feature present?" splits, and the random
//! forest built from them.
//!
//! Tree `t` of a forest draws its bootstrap sample and split candidates from
//! `derive_seed(master, t)`, so the forest is identical however the trees are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::View;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    /// 0 = unbounded.
    pub max_depth: usize,
    /// Fraction of features examined per split; `None` means `ceil(sqrt(V))`.
    pub feature_fraction: Option<f64>,
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 0,
            feature_fraction: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        mal: f64,
        ben: f64,
    },
    /// Rows with `feature` go to `present`, the rest to `absent`.
    Split {
        feature: u32,
        absent: u32,
        present: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

fn gini(mal: f64, ben: f64) -> f64 {
    let n = mal + ben;
    if n == 0.0 {
        return 0.0;
    }
    let p = mal / n;
    2.0 * p * (1.0 - p)
}

pub struct TreeConfig {
    pub max_depth: usize,
    pub candidates: usize,
}

struct Scratch {
    mal: Vec<f64>,
    ben: Vec<f64>,
    rows_with: Vec<u32>,
    touched: Vec<u32>,
    perm: Vec<u32>,
}

impl DecisionTree {
    /// Grows a tree on weighted rows; rows with weight 0 are ignored.
    pub fn grow(
        rows: &[&[u32]],
        labels: &[u8],
        weights: &[f64],
        vocab: usize,
        cfg: &TreeConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut sc = Scratch {
            mal: vec![0.0; vocab],
            ben: vec![0.0; vocab],
            rows_with: vec![0; vocab],
            touched: Vec::new(),
            perm: (0..vocab as u32).collect(),
        };
        let root: Vec<u32> = (0..rows.len() as u32)
            .filter(|&i| weights[i as usize] > 0.0)
            .collect();
        let mut nodes = vec![Node::Leaf { mal: 0.0, ben: 0.0 }];
        // (node slot, member rows, depth)
        let mut stack = vec![(0usize, root, 0usize)];
        while let Some((slot, members, depth)) = stack.pop() {
            let (mut mal, mut ben) = (0.0, 0.0);
            for &i in &members {
                if labels[i as usize] == 1 {
                    mal += weights[i as usize];
                } else {
                    ben += weights[i as usize];
                }
            }
            nodes[slot] = Node::Leaf { mal, ben };
            let depth_capped = cfg.max_depth > 0 && depth >= cfg.max_depth;
            if mal == 0.0 || ben == 0.0 || depth_capped || members.len() < 2 {
                continue;
            }
            let Some(feature) = best_split(
                rows,
                labels,
                weights,
                &members,
                mal,
                ben,
                cfg.candidates,
                &mut sc,
                rng,
            ) else {
                continue;
            };
            let (present, absent): (Vec<u32>, Vec<u32>) = members
                .iter()
                .partition(|&&i| rows[i as usize].binary_search(&feature).is_ok());
            let a = nodes.len();
            nodes.push(Node::Leaf { mal: 0.0, ben: 0.0 });
            nodes.push(Node::Leaf { mal: 0.0, ben: 0.0 });
            nodes[slot] = Node::Split {
                feature,
                absent: a as u32,
                present: a as u32 + 1,
            };
            stack.push((a + 1, present, depth + 1));
            stack.push((a, absent, depth + 1));
        }
        DecisionTree { nodes }
    }

    pub fn leaf(&self, row: &[u32]) -> (f64, f64) {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { mal, ben } => return (*mal, *ben),
                Node::Split {
                    feature,
                    absent,
                    present,
                } => {
                    at = if row.binary_search(feature).is_ok() {
                        *present
                    } else {
                        *absent
                    } as usize;
                }
            }
        }
    }

    /// Majority vote of the reached leaf; ties vote benign.
    pub fn votes_malware(&self, row: &[u32]) -> bool {
        let (mal, ben) = self.leaf(row);
        mal > ben
    }
}

/// Visits features in a seeded random order and evaluates the first
/// `candidates` that split the node non-trivially; keeps drawing past that
/// count only while none has been found. Returns the best by Gini decrease
/// (ties: first visited).
#[allow(clippy::too_many_arguments)]
fn best_split(
    rows: &[&[u32]],
    labels: &[u8],
    weights: &[f64],
    members: &[u32],
    mal: f64,
    ben: f64,
    candidates: usize,
    sc: &mut Scratch,
    rng: &mut ChaCha8Rng,
) -> Option<u32> {
    for &i in members {
        let w = weights[i as usize];
        let is_mal = labels[i as usize] == 1;
        for &j in rows[i as usize] {
            let j = j as usize;
            if sc.rows_with[j] == 0 {
                sc.touched.push(j as u32);
            }
            sc.rows_with[j] += 1;
            if is_mal {
                sc.mal[j] += w;
            } else {
                sc.ben[j] += w;
            }
        }
    }
    let total = mal + ben;
    let parent = gini(mal, ben);
    let n_members = members.len() as u32;
    let vocab = sc.perm.len();
    let mut best: Option<(f64, u32)> = None;
    let mut evaluated = 0usize;
    for k in 0..vocab {
        if evaluated >= candidates && best.is_some() {
            break;
        }
        let r = rng.random_range(k..vocab);
        sc.perm.swap(k, r);
        let f = sc.perm[k] as usize;
        let with = sc.rows_with[f];
        if with == 0 || with == n_members {
            continue;
        }
        evaluated += 1;
        let (pm, pb) = (sc.mal[f], sc.ben[f]);
        let (am, ab) = (mal - pm, ben - pb);
        let child = ((pm + pb) * gini(pm, pb) + (am + ab) * gini(am, ab)) / total;
        let gain = parent - child;
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, f as u32));
        }
    }
    for &j in &sc.touched {
        let j = j as usize;
        sc.rows_with[j] = 0;
        sc.mal[j] = 0.0;
        sc.ben[j] = 0.0;
    }
    sc.touched.clear();
    best.map(|(_, f)| f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn candidates(p: &RfParams, vocab: usize) -> usize {
        let m = match p.feature_fraction {
            Some(f) => (f * vocab as f64).ceil() as usize,
            None => (vocab as f64).sqrt().ceil() as usize,
        };
        m.clamp(1, vocab.max(1))
    }

    pub fn fit(p: &RfParams, train: &View<'_>, seed: u64) -> Self {
        let n = train.len();
        let cfg = TreeConfig {
            max_depth: p.max_depth,
            candidates: Self::candidates(p, train.vocab_size),
        };
        let trees = (0..p.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let mut weights = vec![0.0; n];
                if p.bootstrap {
                    for _ in 0..n {
                        weights[rng.random_range(0..n)] += 1.0;
                    }
                } else {
                    weights.iter_mut().for_each(|w| *w = 1.0);
                }
                DecisionTree::grow(
                    &train.rows,
                    &train.labels,
                    &weights,
                    train.vocab_size,
                    &cfg,
                    &mut rng,
                )
            })
            .collect();
        Forest { trees }
    }

    /// Fraction of trees voting malware.
    pub fn score(&self, rows: &[&[u32]]) -> Vec<f64> {
        let n = self.trees.len() as f64;
        rows.par_iter()
            .map(|r| self.trees.iter().filter(|t| t.votes_malware(r)).count() as f64 / n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_benign_votes_score_zero() {
        let forest = Forest {
            trees: vec![
                DecisionTree {
                    nodes: vec![Node::Leaf { mal: 0.0, ben: 3.0 }]
                };
                5
            ],
        };
        assert_eq!(forest.score(&[&[1u32][..], &[][..]]), vec![0.0, 0.0]);
    }

    #[test]
    fn xor_fits_exactly_without_bootstrap() {
        let rows = vec![vec![], vec![0], vec![1], vec![0, 1]];
        let labels = [0, 1, 1, 0];
        let view = View::from_rows(2, &rows, &labels);
        let p = RfParams {
            n_trees: 1,
            max_depth: 0,
            feature_fraction: None,
            bootstrap: false,
        };
        let f = Forest::fit(&p, &view, 3);
        let s = f.score(&view.rows);
        assert_eq!(s, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn depth_limit_holds() {
        let rows = vec![vec![], vec![0], vec![1], vec![0, 1]];
        let view = View::from_rows(2, &rows, &[0, 1, 1, 0]);
        let p = RfParams {
            n_trees: 1,
            max_depth: 1,
            feature_fraction: Some(1.0),
            bootstrap: false,
        };
        let f = Forest::fit(&p, &view, 0);
        assert_eq!(f.trees[0].nodes.len(), 3);
    }
}
