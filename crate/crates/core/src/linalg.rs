//! Small dense linear algebra: LU with partial pivoting for the n-by-n
//! regime blocks and Cholesky for the normal equations.

use alloc::vec;
use alloc::vec::Vec;
use libm::{fabs, sqrt};

use crate::{Error, Result};

/// LU factorization (partial pivoting) of a small square matrix.
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl LuFactor {
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut p = col;
            let mut best = fabs(lu[col * n + col]);
            for r in col + 1..n {
                let v = fabs(lu[r * n + col]);
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularNormalMatrix);
            }
            if p != col {
                for c in 0..n {
                    lu.swap(col * n + c, p * n + c);
                }
                piv.swap(col, p);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let m = lu[r * n + col] / pivot;
                lu[r * n + col] = m;
                for c in col + 1..n {
                    lu[r * n + c] -= m * lu[col * n + c];
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    /// Solve in place: `b` holds the right-hand side on entry, the solution on exit.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[i] = b[self.piv[i]];
        }
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }
}

/// C = A * B for row-major n-by-n matrices.
pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Solve the symmetric positive-definite system `a x = b` by Cholesky.
///
/// `a` is overwritten with its factor. Fails with `SingularNormalMatrix`
/// when a pivot is not strictly positive.
pub fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularNormalMatrix);
        }
        let dj = sqrt(d);
        a[j * n + j] = dj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / dj;
        }
    }
    // forward then backward substitution with the lower factor
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = a[i * n + k] * x[k];
            x[i] -= t;
        }
        x[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = a[k * n + i] * x[k];
            x[i] -= t;
        }
        x[i] /= a[i * n + i];
    }
    Ok(x)
}
