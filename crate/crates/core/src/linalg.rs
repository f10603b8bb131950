//! Small dense kernels. Vectors are plain `&[f64]`; matrices go through
//! `nalgebra` where a factorization is needed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Leaf size for pairwise summation. Fixed: changing it changes results bitwise.
pub const PAIRWISE_BLOCK: usize = 16;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Scales `w` onto the Euclidean ball of the given radius if it lies outside.
pub fn project_ball(w: &mut [f64], radius: f64) {
    let n = norm(w);
    if n > radius {
        let s = radius / n;
        w.iter_mut().for_each(|x| *x *= s);
    }
}

/// Index-ascending pairwise (tree) sum of `term(i)` over the given indices.
pub fn pairwise_sum<F: Fn(usize) -> f64>(indices: &[usize], term: &F) -> f64 {
    if indices.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &i in indices {
            acc += term(i);
        }
        acc
    } else {
        let mid = indices.len() / 2;
        pairwise_sum(&indices[..mid], term) + pairwise_sum(&indices[mid..], term)
    }
}

/// Pairwise sum over the contiguous range `0..n`.
pub fn pairwise_sum_range<F: Fn(usize) -> f64>(n: usize, term: &F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += term(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, term) + rec(mid, hi, term)
        }
    }
    rec(0, n, term)
}

/// Pairwise sum of vector terms. `add_term(i, acc)` must add term `i` into `acc`.
/// Same tree shape as [`pairwise_sum`], so a contiguous index slice and the
/// equivalent range produce identical bits.
pub fn pairwise_sum_vec<F: Fn(usize, &mut [f64])>(indices: &[usize], d: usize, add_term: &F, out: &mut [f64]) {
    fn rec<F: Fn(usize, &mut [f64])>(
        idx: &[usize],
        add_term: &F,
        out: &mut [f64],
        scratch: &mut Vec<Vec<f64>>,
        depth: usize,
    ) {
        out.iter_mut().for_each(|x| *x = 0.0);
        if idx.len() <= PAIRWISE_BLOCK {
            for &i in idx {
                add_term(i, out);
            }
            return;
        }
        let mid = idx.len() / 2;
        rec(&idx[..mid], add_term, out, scratch, depth + 1);
        while scratch.len() <= depth {
            scratch.push(vec![0.0; out.len()]);
        }
        let mut right = std::mem::take(&mut scratch[depth]);
        rec(&idx[mid..], add_term, &mut right, scratch, depth + 1);
        for (o, r) in out.iter_mut().zip(&right) {
            *o += r;
        }
        scratch[depth] = right;
    }
    debug_assert_eq!(out.len(), d);
    let mut scratch = Vec::new();
    rec(indices, add_term, out, &mut scratch, 0);
}

pub fn to_dmatrix(d: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, data)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Spectral norm of a symmetric matrix: dense eigensolver up to 64, power
/// iteration beyond.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() <= 64 {
        SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    } else {
        power_iteration_norm(a, 1e-9, 10_000)
    }
}

/// Largest |eigenvalue| of a symmetric matrix by power iteration on `A^2`.
pub fn power_iteration_norm(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    // deterministic, non-degenerate start
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..max_iter {
        let w = a * (a * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w / nw;
        if (next - est).abs() <= tol * next.max(1e-300) {
            return next;
        }
        est = next;
    }
    est
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix by shifted
/// inverse iteration (used for large dimensions).
pub fn min_eigenvalue_inverse_iteration(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    // A small positive shift keeps the factorization defined when A is singular.
    let shift = 1e-10 * scale;
    let shifted = a + DMatrix::identity(n, n) * shift;
    let chol = match shifted.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v /= v.norm();
    let mut mu_prev = f64::INFINITY;
    let mut rayleigh = 0.0;
    for _ in 0..max_iter {
        let w = chol.solve(&v);
        let nw = w.norm();
        v = w / nw;
        rayleigh = (v.transpose() * a * &v)[(0, 0)];
        if (rayleigh - mu_prev).abs() <= rel_tol * rayleigh.abs().max(shift) {
            break;
        }
        mu_prev = rayleigh;
    }
    rayleigh.max(0.0)
}

/// `A^{-1/2}` of a symmetric PSD matrix, flooring eigenvalues at `floor`.
pub fn inverse_sqrt_psd(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let q = &eig.eigenvectors;
    let diag = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor).sqrt()),
    );
    let mut out = q * DMatrix::from_diagonal(&diag) * q.transpose();
    symmetrize(&mut out);
    out
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pairwise_matches_naive_closely() {
        let idx: Vec<usize> = (0..1000).collect();
        let s = pairwise_sum(&idx, &|i| 1.0 / (i as f64 + 1.0));
        let naive: f64 = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).sum();
        assert_relative_eq!(s, naive, max_relative = 1e-14);
        assert_eq!(
            s.to_bits(),
            pairwise_sum_range(1000, &|i| 1.0 / (i as f64 + 1.0)).to_bits()
        );
    }

    #[test]
    fn vector_pairwise_matches_scalar_bitwise() {
        let idx: Vec<usize> = (0..333).collect();
        let f = |i: usize| ((i * 7919) % 101) as f64 / 13.0 - 3.0;
        let mut out = vec![0.0; 2];
        pairwise_sum_vec(
            &idx,
            2,
            &|i, acc: &mut [f64]| {
                acc[0] += f(i);
                acc[1] += 2.0 * f(i);
            },
            &mut out,
        );
        let s = pairwise_sum(&idx, &f);
        assert_eq!(out[0].to_bits(), s.to_bits());
    }

    #[test]
    fn projection() {
        let mut w = vec![3.0, 4.0];
        project_ball(&mut w, 1.0);
        assert_relative_eq!(norm(&w), 1.0, epsilon = 1e-15);
        let mut v = vec![0.1, 0.0];
        project_ball(&mut v, 1.0);
        assert_eq!(v, vec![0.1, 0.0]);
    }

    #[test]
    fn spectral_norm_routes_agree() {
        let n = 70;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let (i, j) = (i.min(j), i.max(j));
            ((i * 31 + j * 17) % 23) as f64 / 23.0 - 0.5
        });
        let dense = SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let power = power_iteration_norm(&a, 1e-12, 100_000);
        assert_relative_eq!(dense, power, max_relative = 1e-6);
    }

    #[test]
    fn inverse_iteration_min_eigen() {
        let n = 30;
        let b = DMatrix::from_fn(n, n, |i, j| ((i * 13 + j * 7) % 11) as f64 / 11.0);
        let a = b.transpose() * &b + DMatrix::identity(n, n) * 0.3;
        let dense = sym_eigenvalues(&a)[0];
        let inv = min_eigenvalue_inverse_iteration(&a, 1e-12, 10_000);
        assert_relative_eq!(dense, inv, max_relative = 1e-8);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = inverse_sqrt_psd(&a, 1e-12);
        let prod = &r * &a * &r;
        assert_relative_eq!(prod, DMatrix::identity(2, 2), epsilon = 1e-12);
    }
}
