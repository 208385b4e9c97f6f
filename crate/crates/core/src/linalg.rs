//! Small dense kernels: dot products, a one-sided Jacobi SVD for square
//! matrices and a Cholesky factorization. Matrices are row-major `Vec<f64>`.

/// Dot product with four interleaved accumulators, combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, `None` when either vector has zero norm.
#[inline]
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// `A^T B` for row-major `A` (n x p) and `B` (n x q); result is p x q.
pub fn at_b(a: &[f64], b: &[f64], n: usize, p: usize, q: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * p);
    debug_assert_eq!(b.len(), n * q);
    let mut out = vec![0.0; p * q];
    for r in 0..n {
        let ar = &a[r * p..(r + 1) * p];
        let br = &b[r * q..(r + 1) * q];
        for (i, &x) in ar.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &mut out[i * q..(i + 1) * q];
            for (o, &y) in row.iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    out
}

/// `A B` for row-major `A` (n x p) and `B` (p x q).
pub fn matmul(a: &[f64], b: &[f64], n: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * q];
    for r in 0..n {
        let ar = &a[r * p..(r + 1) * p];
        let orow = &mut out[r * q..(r + 1) * q];
        for (i, &x) in ar.iter().enumerate() {
            let brow = &b[i * q..(i + 1) * q];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

/// `max |Q^T Q - I|` over all entries.
pub fn orthogonality_error(q: &[f64], n: usize) -> f64 {
    let qtq = at_b(q, q, n, n, n);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((qtq[i * n + j] - target).abs());
        }
    }
    worst
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Singular value decomposition `A = U diag(s) V^T` of a square matrix.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub n: usize,
    pub sweeps: usize,
    pub converged: bool,
    /// Number of singular values above the rank tolerance.
    pub rank: usize,
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// One-sided (Hestenes) Jacobi SVD of an `n x n` row-major matrix.
///
/// Column pairs of a working copy of `A` are rotated until every pair is
/// orthogonal to within `JACOBI_TOL` relative to the column norms. The
/// accumulated rotations form `V`; normalized columns form `U`. Columns with
/// a negligible singular value are completed to an orthonormal basis, so `U`
/// is always orthogonal, even for rank-deficient input.
pub fn jacobi_svd(a: &[f64], n: usize) -> Svd {
    assert_eq!(a.len(), n * n, "jacobi_svd expects a square matrix");
    // Column-major working storage.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| (0..n).map(|r| a[r * n + c]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut sweeps = 0;
    let mut converged = n <= 1;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }

    let mut s: Vec<f64> = w.iter().map(|col| norm(col)).collect();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let rank_tol = smax * (n as f64) * f64::EPSILON;

    // Sort by descending singular value.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut vcols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sorted = Vec::with_capacity(n);
    let mut rank = 0;
    for &j in &order {
        let sj = s[j];
        if sj > rank_tol && sj > 0.0 {
            ucols.push(w[j].iter().map(|x| x / sj).collect());
            rank += 1;
        } else {
            ucols.push(Vec::new());
        }
        vcols.push(v[j].clone());
        sorted.push(sj);
    }
    s = sorted;
    complete_basis(&mut ucols, n);

    let mut u = vec![0.0; n * n];
    let mut vm = vec![0.0; n * n];
    for c in 0..n {
        for r in 0..n {
            u[r * n + c] = ucols[c][r];
            vm[r * n + c] = vcols[c][r];
        }
    }
    Svd {
        u,
        s,
        v: vm,
        n,
        sweeps,
        converged,
        rank,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills empty columns with unit vectors orthogonal to the others
/// (Gram-Schmidt against the standard basis, two passes).
fn complete_basis(cols: &mut [Vec<f64>], n: usize) {
    let mut next_e = 0;
    for c in 0..n {
        if !cols[c].is_empty() {
            continue;
        }
        loop {
            assert!(next_e < n, "basis completion ran out of candidates");
            let mut cand = vec![0.0; n];
            cand[next_e] = 1.0;
            next_e += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|o| !o.is_empty()) {
                    let proj = dot(&cand, other);
                    cand.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
                }
            }
            let nrm = norm(&cand);
            if nrm > 1e-6 {
                cand.iter_mut().for_each(|x| *x /= nrm);
                cols[c] = cand;
                break;
            }
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    /// Factors `a`; on failure returns the index of the first non-positive
    /// pivot.
    pub fn new(a: &[f64], n: usize) -> Result<Self, usize> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(j);
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Cholesky { l, n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }

    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn reconstruct(svd: &Svd) -> Vec<f64> {
        let n = svd.n;
        let mut us = svd.u.clone();
        for r in 0..n {
            for c in 0..n {
                us[r * n + c] *= svd.s[c];
            }
        }
        matmul(&us, &transpose(&svd.v, n, n), n, n, n)
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (16, 4), (40, 5)] {
            let a = random(n, seed);
            let svd = jacobi_svd(&a, n);
            assert!(svd.converged);
            let back = reconstruct(&svd);
            for (x, y) in a.iter().zip(&back) {
                assert!((x - y).abs() < 1e-10, "n={n}");
            }
            assert!(orthogonality_error(&svd.u, n) < 1e-10);
            assert!(orthogonality_error(&svd.v, n) < 1e-10);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_deficient_still_orthogonal() {
        // Rank-1 matrix and the zero matrix.
        let n = 4;
        let x = [1.0, 2.0, -1.0, 0.5];
        let y = [0.3, -0.2, 0.9, 1.0];
        let a: Vec<f64> = (0..n * n).map(|i| x[i / n] * y[i % n]).collect();
        let svd = jacobi_svd(&a, n);
        assert_eq!(svd.rank, 1);
        assert!(orthogonality_error(&svd.u, n) < 1e-10);
        let back = reconstruct(&svd);
        for (p, q) in a.iter().zip(&back) {
            assert!((p - q).abs() < 1e-10);
        }
        let z = jacobi_svd(&[0.0; 9], 3);
        assert_eq!(z.rank, 0);
        assert!(orthogonality_error(&z.u, 3) < 1e-12);
    }

    #[test]
    fn cholesky_solves() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let ch = Cholesky::new(&a, 3).unwrap();
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        let ax = matmul(&a, &x, 3, 3, 1);
        for (v, t) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - t).abs() < 1e-12);
        }
        let inv = ch.inverse();
        let eye = matmul(&a, &inv, 3, 3, 3);
        for (i, v) in eye.iter().enumerate() {
            let want = if i % 4 == 0 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
        // det by cofactor expansion: 4*14 - 2*5.4 + 0.6*(-1) = 44.6
        assert!((ch.log_det() - 44.6f64.ln()).abs() < 1e-12);
        assert!(Cholesky::new(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
