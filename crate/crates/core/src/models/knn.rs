//! k-nearest neighbours under Hamming distance on binary rows.
//!
//! Neighbours are ranked by `(distance, training row ordinal)`, so ties at
//! the k-th distance go to the earlier training row. The score is the
//! malware fraction among the `min(k, n)` nearest rows; an even split
//! therefore scores 0.5.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::View;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub vocab_size: usize,
    pub rows: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
}

impl Knn {
    pub fn fit(p: &KnnParams, train: &View<'_>) -> Self {
        Knn {
            k: p.k,
            vocab_size: train.vocab_size,
            rows: train.rows.iter().map(|r| r.to_vec()).collect(),
            labels: train.labels.clone(),
        }
    }

    fn postings(&self) -> Vec<Vec<u32>> {
        let mut post = vec![Vec::new(); self.vocab_size];
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                post[j as usize].push(i as u32);
            }
        }
        post
    }

    pub fn score(&self, queries: &[&[u32]]) -> Vec<f64> {
        let n = self.rows.len();
        let k = self.k.min(n);
        let post = self.postings();
        queries
            .par_iter()
            .map_init(
                || (vec![0u32; n], Vec::<u32>::new()),
                |(overlap, hist), q| {
                    overlap.iter_mut().for_each(|c| *c = 0);
                    for &j in q.iter() {
                        if let Some(p) = post.get(j as usize) {
                            for &i in p {
                                overlap[i as usize] += 1;
                            }
                        }
                    }
                    let dist = |i: usize| (q.len() + self.rows[i].len()) as u32 - 2 * overlap[i];
                    // counting pass: smallest distance bound that admits k rows
                    hist.clear();
                    for i in 0..n {
                        let d = dist(i) as usize;
                        if d >= hist.len() {
                            hist.resize(d + 1, 0);
                        }
                        hist[d] += 1;
                    }
                    let mut below = 0usize;
                    let mut cutoff = 0usize;
                    for (d, &c) in hist.iter().enumerate() {
                        if below + c as usize >= k {
                            cutoff = d;
                            break;
                        }
                        below += c as usize;
                    }
                    let mut at_cutoff = k - below;
                    let mut mal = 0usize;
                    for i in 0..n {
                        let d = dist(i) as usize;
                        let take = if d < cutoff {
                            true
                        } else if d == cutoff && at_cutoff > 0 {
                            at_cutoff -= 1;
                            true
                        } else {
                            false
                        };
                        if take && self.labels[i] == 1 {
                            mal += 1;
                        }
                    }
                    mal as f64 / k as f64
                },
            )
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_neighbour() {
        let rows = vec![vec![1, 3]];
        let view = View::from_rows(4, &rows, &[1]);
        let m = Knn::fit(&KnnParams { k: 1 }, &view);
        assert_eq!(m.score(&view.rows), vec![1.0]);
    }

    #[test]
    fn tie_goes_to_lower_ordinal() {
        // both rows at distance 1 from the empty query
        let rows = vec![vec![0], vec![1]];
        let m = Knn::fit(&KnnParams { k: 1 }, &View::from_rows(2, &rows, &[0, 1]));
        assert_eq!(m.score(&[&[][..]]), vec![0.0]);
        let m = Knn::fit(&KnnParams { k: 1 }, &View::from_rows(2, &rows, &[1, 0]));
        assert_eq!(m.score(&[&[][..]]), vec![1.0]);
    }

    #[test]
    fn even_effective_k_can_split() {
        let rows = vec![vec![0], vec![1]];
        let m = Knn::fit(&KnnParams { k: 3 }, &View::from_rows(2, &rows, &[0, 1]));
        assert_eq!(m.score(&[&[0u32][..]]), vec![0.5]);
    }
}
