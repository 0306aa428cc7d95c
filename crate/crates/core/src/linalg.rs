//! Small dense row-major linear algebra for the per-observation hot loop.
//!
//! Matrices here are tiny (state dimension or parameter dimension), so the
//! routines work in caller-provided buffers instead of allocating.

use nalgebra::{DMatrix, SymmetricEigen};

/// In-place Cholesky factorization of a symmetric positive-definite `dim x dim`
/// matrix. On success the lower triangle of `a` holds `L` with `a = L L^T`;
/// the strict upper triangle is zeroed. Returns `false` if a pivot is not
/// strictly positive and finite.
pub fn cholesky_in_place(a: &mut [f64], dim: usize) -> bool {
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= a[j * dim + k] * a[j * dim + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * dim + j] = ljj;
        for i in (j + 1)..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = s / ljj;
        }
        for k in (j + 1)..dim {
            a[j * dim + k] = 0.0;
        }
    }
    true
}

/// Solves `L L^T x = b` in place given the factor from [`cholesky_in_place`].
pub fn cholesky_solve_in_place(l: &[f64], dim: usize, b: &mut [f64]) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in (i + 1)..dim {
            s -= l[k * dim + i] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}

/// `log det` of the matrix whose Cholesky factor is `l`.
pub fn cholesky_log_det(l: &[f64], dim: usize) -> f64 {
    (0..dim).map(|i| l[i * dim + i].ln()).sum::<f64>() * 2.0
}

/// Inverse of a symmetric positive-definite matrix, or `None` if it is not.
pub fn spd_inverse(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = a.to_vec();
    if !cholesky_in_place(&mut l, dim) {
        return None;
    }
    let mut inv = vec![0.0; dim * dim];
    let mut col = vec![0.0; dim];
    for j in 0..dim {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve_in_place(&l, dim, &mut col);
        for i in 0..dim {
            inv[i * dim + j] = col[i];
        }
    }
    symmetrize(&mut inv, dim);
    Some(inv)
}

pub fn symmetrize(a: &mut [f64], dim: usize) {
    for i in 0..dim {
        for j in (i + 1)..dim {
            let m = 0.5 * (a[i * dim + j] + a[j * dim + i]);
            a[i * dim + j] = m;
            a[j * dim + i] = m;
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &[f64], dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![a[0]];
    }
    let m = DMatrix::from_row_slice(dim, dim, a);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `out = b b^T` for a row-major `m x r` matrix `b`.
pub fn outer_self(b: &[f64], m: usize, r: usize, out: &mut [f64]) {
    for i in 0..m {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..r {
                s += b[i * r + k] * b[j * r + k];
            }
            out[i * m + j] = s;
            out[j * m + i] = s;
        }
    }
}

/// Deterministic pairwise reduction; the tree shape depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_small_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let mut l = a;
        assert!(cholesky_in_place(&mut l, 2));
        let mut b = [2.0, 1.0];
        cholesky_solve_in_place(&l, 2, &mut b);
        // A x = (2, 1) has solution (0.5, 0)
        assert!((b[0] - 0.5).abs() < 1e-15 && b[1].abs() < 1e-15);
        assert!((cholesky_log_det(&l, 2) - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2));
        let mut z = [0.0];
        assert!(!cholesky_in_place(&mut z, 1));
    }

    #[test]
    fn inverse_roundtrip() {
        let a = [2.0, 0.5, 0.5, 1.0];
        let inv = spd_inverse(&a, 2).unwrap();
        let prod00 = a[0] * inv[0] + a[1] * inv[2];
        let prod01 = a[0] * inv[1] + a[1] * inv[3];
        assert!((prod00 - 1.0).abs() < 1e-14 && prod01.abs() < 1e-14);
    }

    #[test]
    fn eigenvalues_sorted() {
        let ev = symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }
}
