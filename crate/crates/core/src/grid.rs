//! Space-time grids, finite-difference stencils and discrete Sobolev norms.

use alloc::vec;
use alloc::vec::Vec;
use libm::{ceil, fabs, floor, round, sqrt};

use crate::{Error, Result};

/// Uniform grid in log-moneyness with a node pinned at `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    y_min: f64,
    y_max: f64,
    m: usize,
    dy: f64,
}

impl SpaceGrid {
    pub fn new(y_min: f64, y_max: f64, m: usize) -> Result<Self> {
        if !(y_min < 0.0 && 0.0 < y_max) {
            return Err(Error::InvalidParameter("grid must straddle y = 0"));
        }
        if m < 3 {
            return Err(Error::InvalidParameter("need at least 3 space nodes"));
        }
        let dy = (y_max - y_min) / (m - 1) as f64;
        let k0 = -y_min / dy;
        if fabs(k0 - round(k0)) > 1e-9 {
            return Err(Error::InvalidParameter("y = 0 must land on a grid node"));
        }
        Ok(Self { y_min, y_max, m, dy })
    }

    /// Default pricing domain: wide enough that Gaussian tails at the
    /// horizons in scope are negligible at the boundary.
    pub fn default_domain() -> Self {
        Self::new(-4.0, 4.0, 401).unwrap()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn node(&self, k: usize) -> f64 {
        self.y_min + k as f64 * self.dy
    }

    pub fn zero_index(&self) -> usize {
        round(-self.y_min / self.dy) as usize
    }

    /// Index of the node nearest to `y`, if `y` lies on the grid within
    /// a relative tolerance.
    pub fn index_of(&self, y: f64) -> Option<usize> {
        let k = (y - self.y_min) / self.dy;
        let kr = round(k);
        if kr < 0.0 || kr as usize >= self.m || fabs(k - kr) > 1e-6 {
            None
        } else {
            Some(kr as usize)
        }
    }

    /// Contiguous node range covering `[lo, hi]`.
    pub fn window_indices(&self, lo: f64, hi: f64) -> Result<core::ops::Range<usize>> {
        if !(lo < hi) || lo < self.y_min - 1e-12 || hi > self.y_max + 1e-12 {
            return Err(Error::WindowOutOfRange);
        }
        let first = ceil((lo - self.y_min) / self.dy - 1e-9) as usize;
        let last = floor((hi - self.y_min) / self.dy + 1e-9) as usize;
        let last = last.min(self.m - 1);
        if last < first + 2 {
            return Err(Error::WindowOutOfRange);
        }
        Ok(first..last + 1)
    }
}

/// Uniform time grid on `[0, tau_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    tau_max: f64,
    p: usize,
    dtau: f64,
}

impl TimeGrid {
    pub fn new(tau_max: f64, p: usize) -> Result<Self> {
        if !(tau_max > 0.0) || !tau_max.is_finite() {
            return Err(Error::InvalidParameter("tau_max must be positive"));
        }
        if p < 1 {
            return Err(Error::InvalidParameter("need at least one time step"));
        }
        Ok(Self { tau_max, p, dtau: tau_max / p as f64 })
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn steps(&self) -> usize {
        self.p
    }

    pub fn dtau(&self) -> f64 {
        self.dtau
    }

    pub fn time(&self, l: usize) -> f64 {
        l as f64 * self.dtau
    }

    /// Step index whose time matches `tau` (must lie on the grid).
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        let l = tau / self.dtau;
        let lr = round(l);
        if lr < 0.0 || lr as usize > self.p || fabs(l - lr) > 1e-6 {
            None
        } else {
            Some(lr as usize)
        }
    }
}

/// Vector-valued function of `(y, tau)` on a space-time grid: `n` components
/// by `m` nodes by `p + 1` steps. Written once by a solver, then immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    n: usize,
    m: usize,
    p: usize,
    values: Vec<f64>, // layout: step-major, then component, then node
}

impl SolutionField {
    pub fn zeros(n: usize, m: usize, p: usize) -> Self {
        Self { n, m, p, values: vec![0.0; n * m * (p + 1)] }
    }

    pub fn components(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn at(&self, comp: usize, node: usize, step: usize) -> f64 {
        self.values[(step * self.n + comp) * self.m + node]
    }

    #[inline]
    pub fn set(&mut self, comp: usize, node: usize, step: usize, v: f64) {
        self.values[(step * self.n + comp) * self.m + node] = v;
    }

    /// All components at one time step, component-major.
    pub fn step_slice(&self, step: usize) -> &[f64] {
        let w = self.n * self.m;
        &self.values[step * w..(step + 1) * w]
    }

    pub fn step_slice_mut(&mut self, step: usize) -> &mut [f64] {
        let w = self.n * self.m;
        &mut self.values[step * w..(step + 1) * w]
    }

    /// One component at one time step.
    pub fn comp_slice(&self, comp: usize, step: usize) -> &[f64] {
        let off = (step * self.n + comp) * self.m;
        &self.values[off..off + self.m]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copy with every value clipped below at `floor`.
    pub fn clipped_below(&self, floor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            if *v < floor {
                *v = floor;
            }
        }
        out
    }
}

/// Nested observation windows: `omega1` (reconstruction) strictly inside
/// `omega` (observation) strictly inside the grid, plus a two-piece open set
/// `omega_small` inside `omega \ omega1` that stays away from `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainWindows {
    pub omega1: (f64, f64),
    pub omega: (f64, f64),
    pub omega_small: [(f64, f64); 2],
}

impl DomainWindows {
    pub fn new(
        omega1: (f64, f64),
        omega: (f64, f64),
        omega_small: [(f64, f64); 2],
    ) -> Result<Self> {
        let ok = omega.0 < omega1.0 && omega1.0 < omega1.1 && omega1.1 < omega.1;
        if !ok {
            return Err(Error::InvalidParameter("omega1 must sit strictly inside omega"));
        }
        for (lo, hi) in omega_small {
            if !(lo < hi) || lo < omega.0 || hi > omega.1 {
                return Err(Error::InvalidParameter("omega_small must sit inside omega"));
            }
            if lo <= 0.0 && 0.0 <= hi {
                return Err(Error::InvalidParameter("omega_small must avoid y = 0"));
            }
        }
        Ok(Self { omega1, omega, omega_small })
    }

    /// Default windows: reconstruction on S in [0.85, 1.18], observation on
    /// S in [0.7, 1.43], with two 0.05-wide side intervals.
    pub fn default_desk() -> Self {
        // ln 0.85 ~ -0.1625, ln 1.18 ~ 0.1655, ln 0.7 ~ -0.3567, ln 1.43 ~ 0.3577
        Self::new(
            (-0.1625, 0.1655),
            (-0.3567, 0.3577),
            [(-0.30, -0.25), (0.25, 0.30)],
        )
        .unwrap()
    }
}

/// Central second difference; the two boundary nodes copy their neighbors.
pub fn second_difference(u: &[f64], dy: f64) -> Vec<f64> {
    let m = u.len();
    debug_assert!(m >= 3);
    let mut d = vec![0.0; m];
    let inv = 1.0 / (dy * dy);
    for k in 1..m - 1 {
        d[k] = (u[k - 1] - 2.0 * u[k] + u[k + 1]) * inv;
    }
    d[0] = d[1];
    d[m - 1] = d[m - 2];
    d
}

/// Central first difference with one-sided stencils at the ends.
pub fn first_difference(u: &[f64], dy: f64) -> Vec<f64> {
    let m = u.len();
    debug_assert!(m >= 2);
    let mut d = vec![0.0; m];
    for k in 1..m - 1 {
        d[k] = (u[k + 1] - u[k - 1]) / (2.0 * dy);
    }
    d[0] = (u[1] - u[0]) / dy;
    d[m - 1] = (u[m - 1] - u[m - 2]) / dy;
    d
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(u: &[f64], dx: f64) -> f64 {
    let m = u.len();
    if m < 2 {
        return 0.0;
    }
    let mut s = 0.5 * (u[0] + u[m - 1]);
    for v in &u[1..m - 1] {
        s += v;
    }
    s * dx
}

fn squared_l2(u: &[f64], dx: f64) -> f64 {
    let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    trapezoid(&sq, dx)
}

/// Discrete Sobolev norm of order 0, 1 or 2 of a windowed slice on a
/// uniform grid: trapezoid rule over squared value and difference
/// quotients, one-sided stencils at the window edges.
pub fn sobolev_norm_slice(u: &[f64], dy: f64, order: u8) -> f64 {
    debug_assert!(order <= 2);
    let mut total = squared_l2(u, dy);
    if order >= 1 {
        total += squared_l2(&first_difference(u, dy), dy);
    }
    if order >= 2 {
        total += squared_l2(&second_difference(u, dy), dy);
    }
    sqrt(total)
}

/// Sobolev norm of a full-grid slice restricted to a window.
pub fn sobolev_norm(
    grid: &SpaceGrid,
    u: &[f64],
    window: (f64, f64),
    order: u8,
) -> Result<f64> {
    if u.len() != grid.m() {
        return Err(Error::ShapeMismatch);
    }
    let range = grid.window_indices(window.0, window.1)?;
    Ok(sobolev_norm_slice(&u[range], grid.dy(), order))
}

/// Vector convention: the squared norms of the components add.
pub fn sobolev_norm_vector(
    grid: &SpaceGrid,
    comps: &[&[f64]],
    window: (f64, f64),
    order: u8,
) -> Result<f64> {
    let mut total = 0.0;
    for u in comps {
        let v = sobolev_norm(grid, u, window, order)?;
        total += v * v;
    }
    Ok(sqrt(total))
}
