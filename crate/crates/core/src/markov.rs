//! Generator-matrix algebra for the driving Markov chain.
//!
//! Convention: `b[i][j]` is the transition rate from state `j` to state `i`,
//! so off-diagonal entries are nonnegative and every **column** sums to zero.
//! The matrix of transition probabilities over a horizon `t` is `exp(t B)`,
//! column-stochastic under the same convention.

use alloc::vec;
use alloc::vec::Vec;
use libm::{ceil, fabs, log2};

use crate::linalg::{matmul, LuFactor};
use crate::{Error, Result};

/// Tolerance on generator column sums; inputs inside it are re-projected
/// by adjusting the diagonal.
pub const COLUMN_SUM_TOL: f64 = 1e-12;

/// Guard against absurd exponential arguments.
const EXPM_NORM_CAP: f64 = 1e6;

/// Validated generator of a finite-state continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    n: usize,
    b: Vec<f64>, // row-major
}

impl GeneratorMatrix {
    /// Validate a square rate matrix: nonnegative off-diagonal entries and
    /// zero column sums (within [`COLUMN_SUM_TOL`], after which the diagonal
    /// is adjusted so columns sum to zero exactly).
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty generator"));
        }
        let mut b = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidParameter("non-finite generator entry"));
                }
                if i != j && v < 0.0 {
                    return Err(Error::NegativeOffDiagonal { row: i, col: j, value: v });
                }
                b[i * n + j] = v;
            }
        }
        for j in 0..n {
            let sum: f64 = (0..n).map(|i| b[i * n + j]).sum();
            if fabs(sum) > COLUMN_SUM_TOL {
                return Err(Error::ColumnSumNonzero { col: j, sum });
            }
            b[j * n + j] -= sum; // re-project exactly
        }
        Ok(Self { n, b })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.b
    }

    /// Transition-probability matrix `exp(t B)` for a horizon `t >= 0`.
    ///
    /// Entries are probabilities: nonnegative with unit column sums, up to
    /// roundoff.
    pub fn transition_matrix(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter("horizon must be finite and >= 0"));
        }
        let scaled: Vec<f64> = self.b.iter().map(|v| v * t).collect();
        expm(&scaled, self.n)
    }

    /// Whether every state is reachable from every other.
    ///
    /// Decided exactly on the directed graph with an edge `j -> i` whenever
    /// `b[i][j] > 0`; equivalent to strict positivity of all entries of
    /// `exp(t B)` for `t > 0`.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n;
        if n == 1 {
            return true;
        }
        let reach = |transpose: bool| -> usize {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(j) = stack.pop() {
                for i in 0..n {
                    let rate = if transpose { self.entry(j, i) } else { self.entry(i, j) };
                    if i != j && rate > 0.0 && !seen[i] {
                        seen[i] = true;
                        count += 1;
                        stack.push(i);
                    }
                }
            }
            count
        };
        reach(false) == n && reach(true) == n
    }
}

/// Dense matrix exponential by scaling and squaring with the order-6
/// diagonal Padé approximant.
pub fn expm(a: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    // 1-norm (max absolute column sum)
    let mut norm = 0.0f64;
    for j in 0..n {
        let s: f64 = (0..n).map(|i| fabs(a[i * n + j])).sum();
        if s > norm {
            norm = s;
        }
    }
    if !norm.is_finite() || norm > EXPM_NORM_CAP {
        return Err(Error::Overflow);
    }
    let squarings = if norm > 0.5 { ceil(log2(norm / 0.5)) as u32 } else { 0 };
    let scale = 1.0 / (1u64 << squarings) as f64;
    let a1: Vec<f64> = a.iter().map(|v| v * scale).collect();

    // Padé(6,6): N(x) = sum c_k x^k, D(x) = N(-x)
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let a2 = matmul(&a1, &a1, n);
    let a4 = matmul(&a2, &a2, n);
    let a6 = matmul(&a4, &a2, n);
    let mut even = vec![0.0; n * n]; // c0 I + c2 A^2 + c4 A^4 + c6 A^6
    let mut odd_inner = vec![0.0; n * n]; // c1 I + c3 A^2 + c5 A^4
    for i in 0..n {
        even[i * n + i] = C[0];
        odd_inner[i * n + i] = C[1];
    }
    for k in 0..n * n {
        even[k] += C[2] * a2[k] + C[4] * a4[k] + C[6] * a6[k];
        odd_inner[k] += C[3] * a2[k] + C[5] * a4[k];
    }
    let odd = matmul(&a1, &odd_inner, n);

    // D = even - odd, N = even + odd; solve D X = N column by column
    let mut denom = vec![0.0; n * n];
    let mut numer = vec![0.0; n * n];
    for k in 0..n * n {
        denom[k] = even[k] - odd[k];
        numer[k] = even[k] + odd[k];
    }
    let lu = LuFactor::new(&denom, n).map_err(|_| Error::Overflow)?;
    let mut result = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = numer[i * n + j];
        }
        lu.solve(&mut col);
        for i in 0..n {
            result[i * n + j] = col[i];
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, n);
    }
    Ok(result)
}
