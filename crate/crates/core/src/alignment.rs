//! Orthogonal Procrustes alignment between seed models and per-word
//! embedding stability.
//!
//! Embeddings are row vectors, so alignment solves
//! `min_Q ||W_ref - W_other Q||_F` subject to `Q^T Q = I`, with `Q` acting on
//! the right. The solution is `Q = U V^T` where `U S V^T` is the SVD of the
//! `d x d` cross-covariance `W_other^T W_ref`. No reflection correction is
//! applied, so `det Q` may be -1.

use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::EmbeddingEnsemble;
use crate::error::{Error, Result};
use crate::linalg;

pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OrthogonalMap {
    /// `d x d`, row-major.
    pub q: Vec<f64>,
    pub dim: usize,
    pub source: String,
    pub target: String,
    /// `||W_ref - W_other Q||_F`.
    pub objective: f64,
    /// The cross-covariance was rank deficient; `Q` is one of several optima.
    pub rank_deficient: bool,
    /// Fewer rows than dimensions.
    pub underdetermined: bool,
}

impl OrthogonalMap {
    pub fn orthogonality_error(&self) -> f64 {
        linalg::orthogonality_error(&self.q, self.dim)
    }

    /// `W Q` for a row-major `rows x d` matrix.
    pub fn apply(&self, w: &[f64], rows: usize) -> Vec<f64> {
        linalg::matmul(w, &self.q, rows, self.dim, self.dim)
    }
}

/// Fits the orthogonal map taking `w_other` onto `w_ref`. Both are row-major
/// `rows x dim`.
pub fn procrustes(w_ref: &[f64], w_other: &[f64], rows: usize, dim: usize) -> Result<OrthogonalMap> {
    if dim == 0 || rows == 0 {
        return Err(Error::InvalidArgument("procrustes needs non-empty matrices".into()));
    }
    if w_ref.len() != rows * dim || w_other.len() != rows * dim {
        return Err(Error::InvalidArgument(format!(
            "procrustes shape mismatch: expected {rows} x {dim} for both inputs"
        )));
    }
    let cross = linalg::at_b(w_other, w_ref, rows, dim, dim);
    let svd = linalg::jacobi_svd(&cross, dim);
    let q = linalg::matmul(&svd.u, &linalg::transpose(&svd.v, dim, dim), dim, dim, dim);
    let aligned = linalg::matmul(w_other, &q, rows, dim, dim);
    let objective = w_ref
        .iter()
        .zip(&aligned)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(OrthogonalMap {
        q,
        dim,
        source: String::new(),
        target: String::new(),
        objective,
        rank_deficient: svd.rank < dim,
        underdetermined: rows < dim,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub words: Vec<String>,
    /// Mean pairwise cosine after alignment; `NaN` when no pair was usable.
    pub es: Vec<f64>,
    /// Model pairs that contributed to each word's mean.
    pub pairs_used: Vec<usize>,
    /// Set when the word had a zero-norm vector in some model.
    pub flagged: Vec<bool>,
    /// Model pairs aligned in total.
    pub pairs_total: usize,
}

impl StabilityReport {
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn mean_es(&self) -> f64 {
        let vals: Vec<f64> = self.es.iter().copied().filter(|v| v.is_finite()).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Unordered model pairs `(i, j)`, `i < j`, in lexicographic order,
/// truncated to `budget` when given.
pub fn model_pairs(k: usize, budget: Option<usize>) -> Vec<(usize, usize)> {
    let all = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j)));
    match budget {
        Some(b) => all.take(b).collect(),
        None => all.collect(),
    }
}

/// Embedding stability: for each model pair `(i, j)`, align model `j` onto
/// model `i` and take `cos(w_i, w_j Q_ij)`; average over pairs per word.
pub fn embedding_stability(ensemble: &EmbeddingEnsemble, pair_budget: Option<usize>) -> Result<StabilityReport> {
    let k = ensemble.k();
    if k < 2 {
        return Err(Error::TooFewModels { need: 2, got: k });
    }
    if pair_budget == Some(0) {
        return Err(Error::InvalidArgument("stability pair budget must be positive".into()));
    }
    let models = ensemble.models();
    let v = ensemble.vocab().len();
    let d = ensemble.dim();
    let pairs = model_pairs(k, pair_budget);

    let mut sums = vec![0.0; v];
    let mut counts = vec![0usize; v];
    let mut flagged = vec![false; v];
    for m in models {
        for (w, row) in m.matrix().chunks_exact(d).enumerate() {
            if linalg::norm(row) == 0.0 {
                flagged[w] = true;
            }
        }
    }

    // Bounded batches keep memory at O(batch * V) while pair order stays fixed.
    let batch = (rayon::current_num_threads() * 2).max(2);
    for chunk in pairs.chunks(batch) {
        let sims: Vec<Vec<Option<f64>>> = chunk
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (&models[i], &models[j]);
                let map = procrustes(a.matrix(), b.matrix(), v, d)?;
                let aligned = map.apply(b.matrix(), v);
                Ok((0..v)
                    .map(|w| linalg::cosine(a.row(w), &aligned[w * d..(w + 1) * d]))
                    .collect())
            })
            .collect::<Result<_>>()?;
        for per_pair in sims {
            for (w, s) in per_pair.into_iter().enumerate() {
                if let Some(s) = s {
                    sums[w] += s;
                    counts[w] += 1;
                }
            }
        }
    }

    let es = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    Ok(StabilityReport {
        words: ensemble.vocab().to_vec(),
        es,
        pairs_used: counts,
        flagged,
        pairs_total: pairs.len(),
    })
}
