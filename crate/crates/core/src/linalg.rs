//! Small dense solves for the fitter's normal equations.

use crate::scalar::Real;

/// Solves `a · x = b` in place for symmetric positive-definite `a`
/// (row-major, `n × n`) by Cholesky factorization. Returns `false` when `a`
/// is not numerically positive definite; `b` then holds garbage.
pub(crate) fn cholesky_solve<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    // L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    // Lᵀ x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s = s - a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}

/// Ordinary least squares `min ‖A x − y‖` through the normal equations.
/// `rows` holds the rows of `A`, each of length `n`.
pub(crate) fn least_squares<T: Real>(rows: &[Vec<T>], y: &[T], n: usize) -> Option<Vec<T>> {
    let mut ata = vec![T::zero(); n * n];
    let mut aty = vec![T::zero(); n];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..n {
            aty[i] = aty[i] + row[i] * yi;
            for j in 0..n {
                ata[i * n + j] = ata[i * n + j] + row[i] * row[j];
            }
        }
    }
    cholesky_solve(&mut ata, &mut aty, n).then_some(aty)
}
