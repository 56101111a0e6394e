//! Time stepper shared by the coupled parabolic systems.
//!
//! One scheme serves the backward pricing system, the forward
//! strike-maturity system, the auxiliary density equation and the
//! fundamental-solution columns: a theta scheme (trapezoidal by default)
//! with a fully implicit Rannacher start to damp nonsmooth initial data,
//! over a spatially discretized operator
//!
//! ```text
//! (L v)_i |_k = sub[i,k] v_i[k-1] + diag[i,k] v_i[k] + sup[i,k] v_i[k+1]
//!             + sum_j coupling[i][j] v_j[k]
//! ```
//!
//! The implicit solve is block tridiagonal with dense n-by-n regime blocks
//! on the diagonal and diagonal off-blocks, solved by block-Thomas
//! recursion. At both space boundaries the second difference of the
//! solution is forced to zero (linearity condition), folded into the first
//! and last interior rows.

use alloc::vec;
use alloc::vec::Vec;
use libm::fabs;

use crate::grid::{SolutionField, TimeGrid};
use crate::linalg::LuFactor;
use crate::{Error, Result};

/// Discretized spatial operator, component-major (`idx = comp * m + node`).
pub struct OperatorCoeffs {
    pub n: usize,
    pub m: usize,
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    /// Dense component coupling, row-major `n * n`.
    pub coupling: Vec<f64>,
}

impl OperatorCoeffs {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            sub: vec![0.0; n * m],
            diag: vec![0.0; n * m],
            sup: vec![0.0; n * m],
            coupling: vec![0.0; n * n],
        }
    }

    /// Apply the operator to a component-major slice at interior nodes;
    /// boundary entries of `out` are left at zero.
    fn apply_interior(&self, v: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            let vi = &v[i * m..(i + 1) * m];
            let o = i * m;
            for k in 1..m - 1 {
                out[o + k] = self.sub[o + k] * vi[k - 1]
                    + self.diag[o + k] * vi[k]
                    + self.sup[o + k] * vi[k + 1];
            }
        }
        for i in 0..n {
            for j in 0..n {
                let c = self.coupling[i * n + j];
                if c == 0.0 {
                    continue;
                }
                let vj = j * m;
                let o = i * m;
                for k in 1..m - 1 {
                    out[o + k] += c * v[vj + k];
                }
            }
        }
    }
}

/// Scheme parameters. Defaults: trapezoidal weighting with four fully
/// implicit initial half-steps.
#[derive(Debug, Clone, Copy)]
pub struct StepperParams {
    pub theta: f64,
    pub rannacher_halves: usize,
    pub cfl_cap: f64,
}

impl Default for StepperParams {
    fn default() -> Self {
        Self { theta: 0.5, rannacher_halves: 4, cfl_cap: 0.5 }
    }
}

/// Block-Thomas factorization of `I - ih * L` with the linearity boundary
/// condition folded in. Reusable across sub-steps with the same implicit
/// weight.
struct Factorization {
    ih: f64,
    n: usize,
    interior: usize,
    /// Effective (possibly folded) diagonal sub-blocks, n entries per node.
    hat_sub: Vec<f64>,
    /// `C'_k` carry matrices, n*n per node.
    carry: Vec<f64>,
    /// LU pivots of the forward-eliminated diagonal blocks.
    lus: Vec<LuFactor>,
}

impl Factorization {
    fn build(op: &OperatorCoeffs, ih: f64) -> Result<Self> {
        let (n, m) = (op.n, op.m);
        let interior = m - 2;
        let mut hat_sub = vec![0.0; interior * n];
        let mut hat_sup = vec![0.0; interior * n];
        let mut hat_diag = vec![0.0; interior * n * n];
        for (idx, k) in (1..m - 1).enumerate() {
            for i in 0..n {
                hat_sub[idx * n + i] = -ih * op.sub[i * m + k];
                hat_sup[idx * n + i] = -ih * op.sup[i * m + k];
                for j in 0..n {
                    let mut v = -ih * op.coupling[i * n + j];
                    if i == j {
                        v += 1.0 - ih * op.diag[i * m + k];
                    }
                    hat_diag[(idx * n + i) * n + j] = v;
                }
            }
        }
        // fold v[0] = 2 v[1] - v[2] into the first interior row
        for i in 0..n {
            let s = hat_sub[i];
            hat_diag[i * n + i] += 2.0 * s;
            hat_sup[i] -= s;
            hat_sub[i] = 0.0;
        }
        // fold v[m-1] = 2 v[m-2] - v[m-3] into the last interior row
        let last = interior - 1;
        for i in 0..n {
            let s = hat_sup[last * n + i];
            hat_diag[(last * n + i) * n + i] += 2.0 * s;
            hat_sub[last * n + i] -= s;
            hat_sup[last * n + i] = 0.0;
        }

        let mut carry = vec![0.0; interior * n * n];
        let mut lus = Vec::with_capacity(interior);
        let mut work = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for idx in 0..interior {
            // M = hat_diag - hat_sub * carry_prev (hat_sub is diagonal)
            work.copy_from_slice(&hat_diag[idx * n * n..(idx + 1) * n * n]);
            if idx > 0 {
                for i in 0..n {
                    let s = hat_sub[idx * n + i];
                    if s == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        work[i * n + j] -= s * carry[((idx - 1) * n + i) * n + j];
                    }
                }
            }
            let lu = LuFactor::new(&work, n).map_err(|_| Error::NonfiniteSolution)?;
            // carry = M^{-1} * hat_sup (hat_sup diagonal: columns are scaled basis vectors)
            for j in 0..n {
                for i in 0..n {
                    col[i] = if i == j { hat_sup[idx * n + j] } else { 0.0 };
                }
                lu.solve(&mut col);
                for i in 0..n {
                    carry[(idx * n + i) * n + j] = col[i];
                }
            }
            lus.push(lu);
        }
        Ok(Self { ih, n, interior, hat_sub, carry, lus })
    }

    /// Solve `(I - ih L) v = rhs` for the interior nodes, then extend to the
    /// boundaries by the linearity condition. `rhs` is component-major over
    /// the full grid; `v` receives the solution.
    fn solve(&self, rhs: &[f64], m: usize, v: &mut [f64]) {
        let n = self.n;
        let interior = self.interior;
        let mut g = vec![0.0; interior * n];
        let mut buf = vec![0.0; n];
        for idx in 0..interior {
            let k = idx + 1;
            for i in 0..n {
                buf[i] = rhs[i * m + k];
                if idx > 0 {
                    buf[i] -= self.hat_sub[idx * n + i] * g[(idx - 1) * n + i];
                }
            }
            self.lus[idx].solve(&mut buf);
            g[idx * n..(idx + 1) * n].copy_from_slice(&buf);
        }
        // back substitution
        for i in 0..n {
            v[i * m + interior] = g[(interior - 1) * n + i];
        }
        for idx in (0..interior - 1).rev() {
            let k = idx + 1;
            for i in 0..n {
                let mut s = g[idx * n + i];
                for j in 0..n {
                    s -= self.carry[(idx * n + i) * n + j] * v[j * m + k + 1];
                }
                v[i * m + k] = s;
            }
        }
        for i in 0..n {
            v[i * m] = 2.0 * v[i * m + 1] - v[i * m + 2];
            v[i * m + m - 1] = 2.0 * v[i * m + m - 2] - v[i * m + m - 3];
        }
    }
}

fn add_source(
    src: &SolutionField,
    tau: f64,
    dtau: f64,
    weight: f64,
    out: &mut [f64],
) {
    if weight == 0.0 {
        return;
    }
    let steps = src.steps();
    let lf = tau / dtau;
    let l0 = libm::floor(lf + 1e-9) as usize;
    let l0 = l0.min(steps);
    let frac = lf - l0 as f64;
    let s0 = src.step_slice(l0);
    if fabs(frac) < 1e-9 || l0 == steps {
        for (o, s) in out.iter_mut().zip(s0) {
            *o += weight * s;
        }
    } else {
        let s1 = src.step_slice(l0 + 1);
        for ((o, a), b) in out.iter_mut().zip(s0).zip(s1) {
            *o += weight * ((1.0 - frac) * a + frac * b);
        }
    }
}

/// March `initial` from `tau = 0` to `tau_max`, storing every full step.
///
/// `source` adds a right-hand side `f(y, tau)` sampled from a field on the
/// same grid (linear interpolation at half-step times).
pub fn march(
    initial: &[f64],
    op: &OperatorCoeffs,
    tg: &TimeGrid,
    params: &StepperParams,
    source: Option<&SolutionField>,
) -> Result<SolutionField> {
    let (n, m) = (op.n, op.m);
    if initial.len() != n * m {
        return Err(Error::ShapeMismatch);
    }
    if m < 5 {
        return Err(Error::InvalidParameter("stepper needs at least 5 space nodes"));
    }
    if let Some(src) = source {
        if src.components() != n || src.nodes() != m || src.steps() != tg.steps() {
            return Err(Error::ShapeMismatch);
        }
    }
    let theta = params.theta;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter("theta must lie in [0, 1]"));
    }
    let dtau = tg.dtau();
    if theta < 0.5 {
        let max_diag = op.diag.iter().fold(0.0f64, |a, &v| a.max(fabs(v)));
        let ratio = 0.5 * max_diag * dtau * (1.0 - 2.0 * theta);
        if ratio > params.cfl_cap {
            return Err(Error::GridTooCoarse { ratio, cap: params.cfl_cap });
        }
    }

    let p = tg.steps();
    let rann_full = (params.rannacher_halves / 2).min(p);
    let mut field = SolutionField::zeros(n, m, p);
    field.step_slice_mut(0).copy_from_slice(initial);

    let fact_half = Factorization::build(op, 0.5 * dtau)?;
    let fact_main = if theta == 0.5 {
        None
    } else {
        Some(Factorization::build(op, theta * dtau)?)
    };

    let mut cur = initial.to_vec();
    let mut rhs = vec![0.0; n * m];
    let mut expl = vec![0.0; n * m];
    let mut next = vec![0.0; n * m];

    let advance = |cur: &mut Vec<f64>,
                       rhs: &mut Vec<f64>,
                       expl: &mut Vec<f64>,
                       next: &mut Vec<f64>,
                       t_start: f64,
                       dt: f64,
                       th: f64,
                       fact: &Factorization|
     -> Result<()> {
        debug_assert!(fabs(fact.ih - th * dt) < 1e-14);
        rhs.copy_from_slice(cur);
        if th < 1.0 {
            for e in expl.iter_mut() {
                *e = 0.0;
            }
            op.apply_interior(cur, expl);
            let w = (1.0 - th) * dt;
            for (r, e) in rhs.iter_mut().zip(expl.iter()) {
                *r += w * e;
            }
        }
        if let Some(src) = source {
            add_source(src, t_start, dtau, (1.0 - th) * dt, rhs);
            add_source(src, t_start + dt, dtau, th * dt, rhs);
        }
        fact.solve(rhs, m, next);
        core::mem::swap(cur, next);
        Ok(())
    };

    for l in 0..p {
        let t0 = tg.time(l);
        if l < rann_full {
            // two fully implicit half-steps per full step
            advance(&mut cur, &mut rhs, &mut expl, &mut next, t0, 0.5 * dtau, 1.0, &fact_half)?;
            advance(
                &mut cur,
                &mut rhs,
                &mut expl,
                &mut next,
                t0 + 0.5 * dtau,
                0.5 * dtau,
                1.0,
                &fact_half,
            )?;
        } else {
            let fact = fact_main.as_ref().unwrap_or(&fact_half);
            advance(&mut cur, &mut rhs, &mut expl, &mut next, t0, dtau, theta, fact)?;
        }
        let mut maxabs = 0.0f64;
        for &v in cur.iter() {
            if !v.is_finite() {
                return Err(Error::NonfiniteSolution);
            }
            maxabs = maxabs.max(fabs(v));
        }
        if maxabs > 1e100 {
            return Err(Error::NonfiniteSolution);
        }
        field.step_slice_mut(l + 1).copy_from_slice(&cur);
    }
    Ok(field)
}
