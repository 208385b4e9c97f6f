//! Exact cosine k-nearest-neighbour search by blocked brute-force scan.
//!
//! Queries are processed in blocks so that each vocabulary row is streamed
//! from memory once per block instead of once per query. Ranking is by
//! descending similarity with ties broken by ascending vocabulary index, so
//! results do not depend on block size or thread count.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::embedding::EmbeddingModel;
use crate::linalg;

const QUERY_BLOCK: usize = 32;

/// Unit-normalized copy of a model's rows, ready for similarity scans.
#[derive(Debug, Clone)]
pub struct CosineIndex {
    unit: Vec<f64>,
    zero: Vec<bool>,
    dim: usize,
    len: usize,
}

impl CosineIndex {
    pub fn new(model: &EmbeddingModel) -> Self {
        let dim = model.dim();
        let mut unit = model.matrix().to_vec();
        let mut zero = vec![false; model.len()];
        for (i, row) in unit.chunks_exact_mut(dim).enumerate() {
            let n = linalg::norm(row);
            if n == 0.0 {
                zero[i] = true;
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        CosineIndex {
            unit,
            zero,
            dim,
            len: model.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.zero[i]
    }

    pub fn unit_row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity between rows `i` and `j`; zero-norm rows give `None`.
    pub fn similarity(&self, i: usize, j: usize) -> Option<f64> {
        if self.zero[i] || self.zero[j] {
            return None;
        }
        Some(linalg::dot(self.unit_row(i), self.unit_row(j)))
    }

    /// Number of rows eligible as neighbours of `query` under `excluded`.
    pub fn eligible_count(&self, query: usize, excluded: &[bool]) -> usize {
        (0..self.len)
            .filter(|&j| j != query && !self.zero[j] && !excluded[j])
            .count()
    }

    /// The `m` nearest rows to each query (self, zero-norm rows and rows
    /// flagged in `excluded` are skipped). Each result is sorted nearest
    /// first and may be shorter than `m` when the pool is smaller.
    pub fn top_k(&self, queries: &[usize], m: usize, excluded: &[bool]) -> Vec<Vec<(usize, f64)>> {
        assert_eq!(excluded.len(), self.len);
        queries
            .par_chunks(QUERY_BLOCK)
            .flat_map_iter(|block| self.top_k_block(block, m, excluded))
            .collect()
    }

    fn top_k_block(&self, block: &[usize], m: usize, excluded: &[bool]) -> Vec<Vec<(usize, f64)>> {
        let b = block.len();
        let mut sims = vec![f64::NEG_INFINITY; b * self.len];
        let qrows: Vec<&[f64]> = block.iter().map(|&q| self.unit_row(q)).collect();
        for j in 0..self.len {
            if self.zero[j] || excluded[j] {
                continue;
            }
            let row = self.unit_row(j);
            for (qi, q) in qrows.iter().enumerate() {
                sims[qi * self.len + j] = linalg::dot(q, row);
            }
        }
        let mut cand: Vec<(usize, f64)> = Vec::with_capacity(self.len);
        block
            .iter()
            .enumerate()
            .map(|(qi, &q)| {
                if self.zero[q] {
                    return Vec::new();
                }
                let s = &sims[qi * self.len..(qi + 1) * self.len];
                cand.clear();
                cand.extend((0..self.len).filter(|&j| j != q && !self.zero[j] && !excluded[j]).map(|j| (j, s[j])));
                let take = m.min(cand.len());
                if take == 0 {
                    return Vec::new();
                }
                if take < cand.len() {
                    cand.select_nth_unstable_by(take - 1, rank_order);
                }
                let mut top = cand[..take].to_vec();
                top.sort_unstable_by(rank_order);
                top
            })
            .collect()
    }
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_full_sort() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (v, d) = (200, 8);
        let data: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vocab = (0..v).map(|i| format!("w{i}")).collect();
        let model = EmbeddingModel::new(vocab, data, d, "t").unwrap();
        let idx = CosineIndex::new(&model);
        let mut excluded = vec![false; v];
        excluded[5] = true;
        let queries: Vec<usize> = (0..v).collect();
        let got = idx.top_k(&queries, 10, &excluded);
        for q in [0usize, 7, 99, 199] {
            let mut all: Vec<(usize, f64)> = (0..v)
                .filter(|&j| j != q && j != 5)
                .map(|j| (j, linalg::cosine(model.row(q), model.row(j)).unwrap()))
                .collect();
            all.sort_by(rank_order);
            let want: Vec<usize> = all[..10].iter().map(|p| p.0).collect();
            let have: Vec<usize> = got[q].iter().map(|p| p.0).collect();
            assert_eq!(have, want);
        }
    }

    #[test]
    fn ties_broken_by_index() {
        let vocab = ["q", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let data = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let model = EmbeddingModel::new(vocab, data, 2, "t").unwrap();
        let idx = CosineIndex::new(&model);
        let got = idx.top_k(&[0], 2, &[false; 4]);
        assert_eq!(got[0].iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 3]);
    }
}
